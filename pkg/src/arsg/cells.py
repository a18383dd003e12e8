"""LSTMP and highway-LSTM cells: single steps and full-sequence drivers.

The single-step functions are composed from tape primitives and mirror the
cell equations one term at a time; they are the reference surface that the
scalar oracles and per-step gradient checks exercise.  ``run_layer`` drives
a whole sequence through the fused kernels in :mod:`arsg.kernels`, which is
what the encoder uses in production.  Both routes are differentiable and
both are validated against the same finite-difference oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .tape import Tensor, active_tape, add, affine, hconcat, matvec, mul, sigmoid, tanh


@dataclass
class CellState:
    """One timestep of cell state: c (cell), r (projection), m (cell output)."""

    c: Tensor
    r: Tensor
    m: Tensor

    @classmethod
    def zeros(cls, cell: int, proj: int) -> "CellState":
        return cls(Tensor(np.zeros(cell)), Tensor(np.zeros(proj)), Tensor(np.zeros(cell)))


@dataclass
class LstmpParams:
    """Weights of one LSTMP layer.

    Peephole connections are diagonal, stored as vectors and applied
    elementwise.  The recurrent projection W_rm maps the cell output back
    down to the projection dimension (proj <= cell).  The optional
    sigmoid readout (W_yr, b_y) is carried here for completeness but is
    never applied by the step functions.
    """

    W_xi: Tensor
    W_xf: Tensor
    W_xc: Tensor
    W_xo: Tensor
    W_mi: Tensor
    W_mf: Tensor
    W_mc: Tensor
    W_mo: Tensor
    w_ci: Tensor
    w_cf: Tensor
    w_co: Tensor
    b_i: Tensor
    b_f: Tensor
    b_c: Tensor
    b_o: Tensor
    W_rm: Tensor
    W_yr: Tensor | None = None
    b_y: Tensor | None = None

    @property
    def in_dim(self) -> int:
        return self.W_xi.data.shape[1]

    @property
    def cell_dim(self) -> int:
        return self.W_xi.data.shape[0]

    @property
    def proj_dim(self) -> int:
        return self.W_rm.data.shape[0]

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for field in ("W_xi", "W_xf", "W_xc", "W_xo", "W_mi", "W_mf", "W_mc", "W_mo",
                      "w_ci", "w_cf", "w_co", "b_i", "b_f", "b_c", "b_o", "W_rm",
                      "W_yr", "b_y"):
            t = getattr(self, field)
            if t is not None:
                out[prefix + field] = t
        return out

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, cell: int, proj: int) -> "LstmpParams":
        if proj > cell:
            raise ConfigError(f"projection dim {proj} exceeds cell dim {cell}")

        def w(shape):
            return Tensor(rng.uniform(-0.05, 0.05, shape))

        return cls(
            W_xi=w((cell, in_dim)), W_xf=w((cell, in_dim)),
            W_xc=w((cell, in_dim)), W_xo=w((cell, in_dim)),
            W_mi=w((cell, proj)), W_mf=w((cell, proj)),
            W_mc=w((cell, proj)), W_mo=w((cell, proj)),
            w_ci=w(cell), w_cf=w(cell), w_co=w(cell),
            b_i=Tensor(np.zeros(cell)),
            b_f=Tensor(np.ones(cell)),  # forget gate open at init
            b_c=Tensor(np.zeros(cell)),
            b_o=Tensor(np.zeros(cell)),
            W_rm=w((proj, cell)),
        )


@dataclass
class HlstmParams:
    """LSTMP weights plus the carry gate of a highway layer.

    ``w_d2`` is present exactly when the layer below is itself an LSTM
    layer (the carry gate then peeks at that layer's current cell state);
    for a carry straight from the layer input, w_d2 is None.
    """

    base: LstmpParams
    W_xd: Tensor
    w_d1: Tensor
    b_d: Tensor
    w_d2: Tensor | None = None

    @property
    def in_dim(self) -> int:
        return self.base.in_dim

    @property
    def cell_dim(self) -> int:
        return self.base.cell_dim

    @property
    def proj_dim(self) -> int:
        return self.base.proj_dim

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = self.base.named(prefix)
        out[prefix + "W_xd"] = self.W_xd
        out[prefix + "w_d1"] = self.w_d1
        out[prefix + "b_d"] = self.b_d
        if self.w_d2 is not None:
            out[prefix + "w_d2"] = self.w_d2
        return out

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, cell: int, proj: int,
             carry_from_cell: bool = True) -> "HlstmParams":
        base = LstmpParams.init(rng, in_dim, cell, proj)
        if not carry_from_cell and in_dim != cell:
            raise ConfigError(
                f"carry from the layer input needs in_dim == cell_dim for the "
                f"elementwise carry term, got in={in_dim} cell={cell}"
            )
        return cls(
            base=base,
            W_xd=Tensor(rng.uniform(-0.05, 0.05, (cell, in_dim))),
            w_d1=Tensor(rng.uniform(-0.05, 0.05, cell)),
            b_d=Tensor(np.full(cell, 2.0)),  # carry mostly open at init
            w_d2=Tensor(rng.uniform(-0.05, 0.05, cell)) if carry_from_cell else None,
        )


# ---------------------------------------------------------------------------
# single-step transitions (tape-primitive composition)
# ---------------------------------------------------------------------------


def _gate_pre(W_x, x, W_m, r, w_c, c, b):
    pre = add(matvec(W_x, x), matvec(W_m, r))
    if w_c is not None:
        pre = add(pre, mul(w_c, c))
    return add(pre, b)


def _check_step_dims(p, x_t: Tensor, prev: CellState):
    if x_t.data.shape != (p.in_dim,):
        raise ShapeError(f"step input has shape {x_t.data.shape}, layer expects ({p.in_dim},)")
    if prev.c.data.shape != (p.cell_dim,) or prev.r.data.shape != (p.proj_dim,):
        raise ShapeError(
            f"previous state dims c={prev.c.data.shape} r={prev.r.data.shape} do not "
            f"match cell={p.cell_dim} proj={p.proj_dim}"
        )


def lstmp_step(p: LstmpParams, x_t: Tensor, prev: CellState) -> CellState:
    """One LSTMP transition: peephole gates, cell update, projected output."""
    _check_step_dims(p, x_t, prev)
    i = sigmoid(_gate_pre(p.W_xi, x_t, p.W_mi, prev.r, p.w_ci, prev.c, p.b_i))
    f = sigmoid(_gate_pre(p.W_xf, x_t, p.W_mf, prev.r, p.w_cf, prev.c, p.b_f))
    g = tanh(_gate_pre(p.W_xc, x_t, p.W_mc, prev.r, None, None, p.b_c))
    c = add(mul(f, prev.c), mul(i, g))
    o = sigmoid(_gate_pre(p.W_xo, x_t, p.W_mo, prev.r, p.w_co, c, p.b_o))
    m = mul(o, tanh(c))
    r = matvec(p.W_rm, m)
    return CellState(c=c, r=r, m=m)


def _carry_gate(p: HlstmParams, x_t, prev_c, below_c):
    pre = add(matvec(p.W_xd, x_t), mul(p.w_d1, prev_c))
    if below_c is not None:
        pre = add(pre, mul(p.w_d2, below_c))
    return sigmoid(add(pre, p.b_d))


def hlstm_step_over_lstm(p: HlstmParams, x_t: Tensor, prev: CellState,
                         below_c: Tensor) -> CellState:
    """Highway step whose carry gate reads the lower LSTM layer's cell state."""
    if p.w_d2 is None:
        raise ConfigError("carry gate over an LSTM predecessor requires w_d2")
    _check_step_dims(p, x_t, prev)
    if below_c.data.shape != (p.cell_dim,):
        raise ShapeError(
            f"lower-layer cell state has shape {below_c.data.shape}, expected ({p.cell_dim},)"
        )
    i = sigmoid(_gate_pre(p.base.W_xi, x_t, p.base.W_mi, prev.r, p.base.w_ci, prev.c, p.base.b_i))
    f = sigmoid(_gate_pre(p.base.W_xf, x_t, p.base.W_mf, prev.r, p.base.w_cf, prev.c, p.base.b_f))
    g = tanh(_gate_pre(p.base.W_xc, x_t, p.base.W_mc, prev.r, None, None, p.base.b_c))
    d = _carry_gate(p, x_t, prev.c, below_c)
    c = add(add(mul(f, prev.c), mul(i, g)), mul(d, below_c))
    o = sigmoid(_gate_pre(p.base.W_xo, x_t, p.base.W_mo, prev.r, p.base.w_co, c, p.base.b_o))
    m = mul(o, tanh(c))
    r = matvec(p.base.W_rm, m)
    return CellState(c=c, r=r, m=m)


def hlstm_step_over_input(p: HlstmParams, x_t: Tensor, prev: CellState) -> CellState:
    """Highway step whose carry gate feeds the raw layer input into the cell."""
    if p.w_d2 is not None:
        raise ConfigError("carry over a non-LSTM predecessor must not have w_d2")
    if p.in_dim != p.cell_dim:
        raise ConfigError(
            f"carry from the layer input needs in_dim == cell_dim for the "
            f"elementwise carry term, got in={p.in_dim} cell={p.cell_dim}"
        )
    _check_step_dims(p, x_t, prev)
    i = sigmoid(_gate_pre(p.base.W_xi, x_t, p.base.W_mi, prev.r, p.base.w_ci, prev.c, p.base.b_i))
    f = sigmoid(_gate_pre(p.base.W_xf, x_t, p.base.W_mf, prev.r, p.base.w_cf, prev.c, p.base.b_f))
    g = tanh(_gate_pre(p.base.W_xc, x_t, p.base.W_mc, prev.r, None, None, p.base.b_c))
    d = _carry_gate(p, x_t, prev.c, None)
    c = add(add(mul(f, prev.c), mul(i, g)), mul(d, x_t))
    o = sigmoid(_gate_pre(p.base.W_xo, x_t, p.base.W_mo, prev.r, p.base.w_co, c, p.base.b_o))
    m = mul(o, tanh(c))
    r = matvec(p.base.W_rm, m)
    return CellState(c=c, r=r, m=m)


# ---------------------------------------------------------------------------
# full-sequence driver (fused kernel as a tape op)
# ---------------------------------------------------------------------------

_EMPTY_MAT = np.zeros((0, 0))
_EMPTY_VEC = np.zeros(0)


def _layer_mode(p) -> int:
    if isinstance(p, HlstmParams):
        return 1 if p.w_d2 is not None else 2
    return 0


def run_layer(p, x_seq: Tensor, direction: str,
              below_c_seq: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Run one layer over a whole sequence; returns (r_seq [L,proj], c_seq [L,cell]).

    ``direction="backward"`` runs the recurrence from the last frame to the
    first with the same parameters (a backward layer owns its own params at
    the encoder level).  ``below_c_seq`` must be given exactly when the
    layer's carry gate reads a lower LSTM layer's cells, and must already be
    the same-direction cell sequence.
    """
    if direction not in ("forward", "backward"):
        raise ConfigError(f"direction must be 'forward' or 'backward', got {direction!r}")
    mode = _layer_mode(p)
    if mode == 1 and below_c_seq is None:
        raise ConfigError("this layer's carry gate reads the layer below; below_c_seq is required")
    if mode != 1 and below_c_seq is not None:
        raise ConfigError("below_c_seq given but this layer has no cell-to-cell carry")
    if mode == 2 and p.in_dim != p.cell_dim:
        raise ConfigError(
            f"carry from the layer input needs in_dim == cell_dim, got in={p.in_dim} "
            f"cell={p.cell_dim}"
        )
    L = x_seq.data.shape[0]
    if L < 1 or x_seq.data.ndim != 2 or x_seq.data.shape[1] != p.in_dim:
        raise ShapeError(f"x_seq has shape {x_seq.data.shape}, expected (L,{p.in_dim})")
    if below_c_seq is not None and below_c_seq.data.shape != (L, p.cell_dim):
        raise ShapeError(
            f"below_c_seq has shape {below_c_seq.data.shape}, expected ({L},{p.cell_dim})"
        )

    reverse = direction == "backward"
    base = p.base if isinstance(p, HlstmParams) else p
    X = x_seq.data[::-1] if reverse else x_seq.data
    X = np.ascontiguousarray(X)
    if mode == 1:
        BC = below_c_seq.data[::-1] if reverse else below_c_seq.data
        BC = np.ascontiguousarray(BC)
    else:
        BC = _EMPTY_MAT
    if mode == 0:
        W_xd, w_d1, w_d2, b_d = _EMPTY_MAT, _EMPTY_VEC, _EMPTY_VEC, _EMPTY_VEC
    else:
        W_xd, w_d1, b_d = p.W_xd.data, p.w_d1.data, p.b_d.data
        w_d2 = p.w_d2.data if p.w_d2 is not None else _EMPTY_VEC

    with np.errstate(over="ignore"):
        I, F, G, O, D, C, TC, R = kernels.layer_forward(
            X, BC, mode,
            base.W_xi.data, base.W_xf.data, base.W_xc.data, base.W_xo.data,
            base.W_mi.data, base.W_mf.data, base.W_mc.data, base.W_mo.data,
            base.w_ci.data, base.w_cf.data, base.w_co.data,
            base.b_i.data, base.b_f.data, base.b_c.data, base.b_o.data,
            base.W_rm.data,
            W_xd, w_d1, w_d2, b_d)

    r_seq = Tensor(np.ascontiguousarray(R[::-1]) if reverse else R)
    c_seq = Tensor(np.ascontiguousarray(C[::-1]) if reverse else C)

    tape = active_tape()
    if tape is not None:
        def bwd(g_r, g_c):
            gr = np.ascontiguousarray(g_r[::-1]) if reverse else g_r
            gc = np.ascontiguousarray(g_c[::-1]) if reverse else g_c
            with np.errstate(over="ignore"):
                outs = kernels.layer_backward(
                    X, BC, mode,
                    base.W_xi.data, base.W_xf.data, base.W_xc.data, base.W_xo.data,
                    base.W_mi.data, base.W_mf.data, base.W_mc.data, base.W_mo.data,
                    base.w_ci.data, base.w_cf.data, base.w_co.data,
                    base.W_rm.data,
                    W_xd, w_d1, w_d2,
                    I, F, G, O, D, C, TC, R,
                    gr, gc)
            (dX, dBC,
             dW_xi, dW_xf, dW_xc, dW_xo,
             dW_mi, dW_mf, dW_mc, dW_mo,
             dw_ci, dw_cf, dw_co,
             db_i, db_f, db_c, db_o,
             dW_rm,
             dW_xd, dw_d1, dw_d2, db_d) = outs
            _acc(x_seq, dX[::-1] if reverse else dX)
            if mode == 1:
                _acc(below_c_seq, dBC[::-1] if reverse else dBC)
            for t, g in ((base.W_xi, dW_xi), (base.W_xf, dW_xf), (base.W_xc, dW_xc),
                         (base.W_xo, dW_xo), (base.W_mi, dW_mi), (base.W_mf, dW_mf),
                         (base.W_mc, dW_mc), (base.W_mo, dW_mo), (base.w_ci, dw_ci),
                         (base.w_cf, dw_cf), (base.w_co, dw_co), (base.b_i, db_i),
                         (base.b_f, db_f), (base.b_c, db_c), (base.b_o, db_o),
                         (base.W_rm, dW_rm)):
                _acc(t, g)
            if mode != 0:
                _acc(p.W_xd, dW_xd)
                _acc(p.w_d1, dw_d1)
                _acc(p.b_d, db_d)
                if mode == 1:
                    _acc(p.w_d2, dw_d2)

        inputs = (x_seq,) if below_c_seq is None else (x_seq, below_c_seq)
        tape.record("lstm_layer", inputs, (r_seq, c_seq), bwd)
    return r_seq, c_seq


def _acc(t: Tensor, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def bidir_concat(fwd_r_seq: Tensor, bwd_r_seq: Tensor) -> Tensor:
    """Per-step concatenation of the two directions, forward half first."""
    if fwd_r_seq.data.shape[0] != bwd_r_seq.data.shape[0]:
        raise ShapeError(
            f"direction lengths differ: {fwd_r_seq.data.shape[0]} vs {bwd_r_seq.data.shape[0]}"
        )
    return hconcat(fwd_r_seq, bwd_r_seq)


def layer_readout(p: LstmpParams, r_t: Tensor) -> Tensor:
    """Optional per-layer sigmoid readout of the projected output."""
    if p.W_yr is None or p.b_y is None:
        raise ConfigError("layer has no readout parameters")
    return sigmoid(affine(p.W_yr, r_t, p.b_y))

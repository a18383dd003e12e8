"""Dense float64 tensors with tape-recorded reverse-mode differentiation.

A ``Tape`` is a single-threaded recording context.  Primitive operations
work on plain numpy arrays wrapped in ``Tensor``; while a tape is active
each primitive appends one node (inputs, outputs, backward closure) to the
tape.  ``Tape.backward`` replays the nodes in reverse, accumulating
gradients into ``Tensor.grad`` buffers.  Tensors touched by no active tape
are immutable values as far as this module is concerned and are safe to
share across threads.

All arithmetic is float64.  ``grad_check`` is the central-finite-difference
oracle used throughout the test suite.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "grad_check",
    "add",
    "mul",
    "smul",
    "sigmoid",
    "tanh",
    "affine",
    "matvec",
    "vecmat",
    "matmul",
    "linear_rows",
    "add_rowvec",
    "dot",
    "vsum",
    "concat",
    "hconcat",
    "rows",
    "row",
    "slice_vec",
    "scatter_window",
    "softmax",
    "cross_entropy_logits",
    "conv1d_time",
]


class Tensor:
    """A dense real array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def dims(self):
        return list(self.data.shape)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def tensor(data) -> Tensor:
    return Tensor(data)


_ACTIVE: Tape | None = None


class Tape:
    """Ordered record of primitive operations for one forward evaluation.

    Nodes are stored in execution order, so a reverse sweep visits every
    node after all of its consumers.  Gradient accumulators live on the
    tensors themselves and start out as None (treated as zero).
    """

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise DomainError("tapes do not nest; a tape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = None
        return False

    def record(self, name, inputs, outputs, backward):
        self._nodes.append((name, inputs, outputs, backward))

    def __len__(self):
        return len(self._nodes)

    def op_names(self):
        return [n for n, _, _, _ in self._nodes]

    def backward(self, loss: Tensor, seed: float = 1.0):
        """Accumulate d(loss)/d(leaf) into .grad for every recorded leaf.

        ``seed`` scales the root gradient, which lets a caller fold a
        batch-averaging constant into a single sweep.
        """
        if loss.data.shape != ():
            raise DomainError(
                f"backward needs a scalar root, got shape {loss.data.shape}"
            )
        _accumulate(loss, np.asarray(seed, dtype=np.float64))
        for _, _, outputs, backward in reversed(self._nodes):
            if any(o.grad is not None for o in outputs):
                grads = tuple(
                    o.grad if o.grad is not None else np.zeros_like(o.data)
                    for o in outputs
                )
                backward(*grads)


def active_tape() -> Tape | None:
    return _ACTIVE


def _accumulate(t: Tensor, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(name, inputs, outputs, backward):
    if _ACTIVE is not None:
        _ACTIVE.record(name, inputs, outputs, backward)


# ---------------------------------------------------------------------------
# elementwise and scalar primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    out = Tensor(a.data + b.data)

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, g)

    _record("add", (a, b), (out,), bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    out = Tensor(a.data * b.data)

    def bwd(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    _record("mul", (a, b), (out,), bwd)
    return out


def smul(a: Tensor, k: float) -> Tensor:
    """Multiply by a python constant (no gradient for the constant)."""
    kf = float(k)
    out = Tensor(a.data * kf)

    def bwd(g):
        _accumulate(a, g * kf)

    _record("smul", (a,), (out,), bwd)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_np(a.data)
    out = Tensor(y)

    def bwd(g):
        _accumulate(a, g * y * (1.0 - y))

    _record("sigmoid", (a,), (out,), bwd)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def bwd(g):
        _accumulate(a, g * (1.0 - y * y))

    _record("tanh", (a,), (out,), bwd)
    return out


def _sigmoid_np(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# linear algebra primitives
# ---------------------------------------------------------------------------


def affine(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """W @ x + b for a matrix W [m,n], vector x [n] and bias b [m]."""
    if W.data.ndim != 2 or x.data.ndim != 1 or W.data.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"affine: W has shape {W.data.shape}, x has shape {x.data.shape}"
        )
    if b.data.shape != (W.data.shape[0],):
        raise ShapeError(
            f"affine: W has shape {W.data.shape}, b has shape {b.data.shape}"
        )
    out = Tensor(W.data @ x.data + b.data)

    def bwd(g):
        _accumulate(W, np.outer(g, x.data))
        _accumulate(x, W.data.T @ g)
        _accumulate(b, g)

    _record("affine", (W, x, b), (out,), bwd)
    return out


def matvec(M: Tensor, v: Tensor) -> Tensor:
    if M.data.ndim != 2 or M.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"matvec: {M.data.shape} @ {v.data.shape}")
    out = Tensor(M.data @ v.data)

    def bwd(g):
        _accumulate(M, np.outer(g, v.data))
        _accumulate(v, M.data.T @ g)

    _record("matvec", (M, v), (out,), bwd)
    return out


def vecmat(v: Tensor, M: Tensor) -> Tensor:
    """v @ M (weighted combination of the rows of M)."""
    if M.data.ndim != 2 or v.data.shape[0] != M.data.shape[0]:
        raise ShapeError(f"vecmat: {v.data.shape} @ {M.data.shape}")
    out = Tensor(v.data @ M.data)

    def bwd(g):
        _accumulate(v, M.data @ g)
        _accumulate(M, np.outer(v.data, g))

    _record("vecmat", (v, M), (out,), bwd)
    return out


def matmul(A: Tensor, B: Tensor) -> Tensor:
    if A.data.ndim != 2 or B.data.ndim != 2 or A.data.shape[1] != B.data.shape[0]:
        raise ShapeError(f"matmul: {A.data.shape} @ {B.data.shape}")
    out = Tensor(A.data @ B.data)

    def bwd(g):
        _accumulate(A, g @ B.data.T)
        _accumulate(B, A.data.T @ g)

    _record("matmul", (A, B), (out,), bwd)
    return out


def linear_rows(M: Tensor, A: Tensor) -> Tensor:
    """Apply the linear map A to every row of M: out[l] = A @ M[l]."""
    if M.data.ndim != 2 or A.data.ndim != 2 or M.data.shape[1] != A.data.shape[1]:
        raise ShapeError(f"linear_rows: rows {M.data.shape} through map {A.data.shape}")
    out = Tensor(M.data @ A.data.T)

    def bwd(g):
        _accumulate(M, g @ A.data)
        _accumulate(A, g.T @ M.data)

    _record("linear_rows", (M, A), (out,), bwd)
    return out


def add_rowvec(M: Tensor, v: Tensor) -> Tensor:
    """Add the vector v to every row of M."""
    if M.data.ndim != 2 or M.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"add_rowvec: {M.data.shape} + row {v.data.shape}")
    out = Tensor(M.data + v.data[None, :])

    def bwd(g):
        _accumulate(M, g)
        _accumulate(v, g.sum(axis=0))

    _record("add_rowvec", (M, v), (out,), bwd)
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape or a.data.ndim != 1:
        raise ShapeError(f"dot: shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    _record("dot", (a, b), (out,), bwd)
    return out


def vsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bwd(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    _record("vsum", (a,), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------


def concat(parts) -> Tensor:
    parts = list(parts)
    if not parts or any(p.data.ndim != 1 for p in parts):
        raise ShapeError("concat expects one or more vectors")
    out = Tensor(np.concatenate([p.data for p in parts]))
    sizes = [p.data.shape[0] for p in parts]

    def bwd(g):
        off = 0
        for p, n in zip(parts, sizes):
            _accumulate(p, g[off : off + n])
            off += n

    _record("concat", tuple(parts), (out,), bwd)
    return out


def hconcat(A: Tensor, B: Tensor) -> Tensor:
    """Concatenate two matrices column-wise (per-row concatenation)."""
    if A.data.ndim != 2 or B.data.ndim != 2 or A.data.shape[0] != B.data.shape[0]:
        raise ShapeError(f"hconcat: {A.data.shape} | {B.data.shape}")
    out = Tensor(np.concatenate([A.data, B.data], axis=1))
    na = A.data.shape[1]

    def bwd(g):
        _accumulate(A, g[:, :na])
        _accumulate(B, g[:, na:])

    _record("hconcat", (A, B), (out,), bwd)
    return out


def rows(M: Tensor, lo: int, hi: int) -> Tensor:
    """Rows lo..hi-1 of M (half-open, 0-based)."""
    if not (0 <= lo < hi <= M.data.shape[0]):
        raise ShapeError(f"rows: [{lo},{hi}) out of range for {M.data.shape}")
    out = Tensor(M.data[lo:hi].copy())

    def bwd(g):
        if M.grad is None:
            M.grad = np.zeros_like(M.data)
        M.grad[lo:hi] += g

    _record("rows", (M,), (out,), bwd)
    return out


def row(M: Tensor, i: int) -> Tensor:
    if not (0 <= i < M.data.shape[0]):
        raise ShapeError(f"row: index {i} out of range for {M.data.shape}")
    out = Tensor(M.data[i].copy())

    def bwd(g):
        if M.grad is None:
            M.grad = np.zeros_like(M.data)
        M.grad[i] += g

    _record("row", (M,), (out,), bwd)
    return out


def slice_vec(v: Tensor, lo: int, hi: int) -> Tensor:
    if not (0 <= lo < hi <= v.data.shape[0]):
        raise ShapeError(f"slice_vec: [{lo},{hi}) out of range for {v.data.shape}")
    out = Tensor(v.data[lo:hi].copy())

    def bwd(g):
        if v.grad is None:
            v.grad = np.zeros_like(v.data)
        v.grad[lo:hi] += g

    _record("slice_vec", (v,), (out,), bwd)
    return out


def scatter_window(vals: Tensor, length: int, lo: int, fill: float) -> Tensor:
    """Place vals at [lo, lo+len(vals)) of a length-`length` vector, rest `fill`."""
    n = vals.data.shape[0]
    if not (0 <= lo and lo + n <= length):
        raise ShapeError(f"scatter_window: [{lo},{lo + n}) outside length {length}")
    buf = np.full(length, fill, dtype=np.float64)
    buf[lo : lo + n] = vals.data
    out = Tensor(buf)

    def bwd(g):
        _accumulate(vals, g[lo : lo + n])

    _record("scatter_window", (vals,), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def softmax_np(e):
    """Numerically stable softmax on a plain array (max subtraction)."""
    e = np.asarray(e, dtype=np.float64)
    m = e.max()
    ex = np.exp(e - m)
    return ex / ex.sum()


def softmax(e: Tensor) -> Tensor:
    if e.data.ndim != 1 or e.data.shape[0] < 1:
        raise DomainError("softmax needs a non-empty vector")
    p = softmax_np(e.data)
    out = Tensor(p)

    def bwd(g):
        _accumulate(e, p * (g - g @ p))

    _record("softmax", (e,), (out,), bwd)
    return out


def cross_entropy_logits(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], computed as logsumexp - logits[target]."""
    z = logits.data
    if z.ndim != 1:
        raise ShapeError(f"cross_entropy_logits: logits shape {z.shape}")
    if not (0 <= target < z.shape[0]):
        raise DomainError(f"cross_entropy_logits: target {target} outside [0,{z.shape[0]})")
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    out = Tensor(lse - z[target])
    p = np.exp(z - lse)

    def bwd(g):
        d = p * float(g)
        d[target] -= float(g)
        _accumulate(logits, d)

    _record("cross_entropy", (logits,), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# time-axis convolution
# ---------------------------------------------------------------------------


def conv1d_time(Q: Tensor, a: Tensor) -> Tensor:
    """Correlate each filter of the bank Q [F,K] with the signal a [L].

    Row l of the [L,F] result holds the F filter responses centered at
    position l; the signal is zero-padded outside its support.  K must be
    odd so "centered" is well defined.
    """
    from .errors import ConfigError

    if Q.data.ndim != 2:
        raise ShapeError(f"conv1d_time: kernel bank shape {Q.data.shape}")
    F, K = Q.data.shape
    if K % 2 == 0:
        raise ConfigError(f"conv1d_time: kernel width must be odd, got {K}")
    if a.data.ndim != 1 or a.data.shape[0] < 1:
        raise ShapeError(f"conv1d_time: signal shape {a.data.shape}")
    L = a.data.shape[0]
    half = K // 2
    pad = np.zeros(L + 2 * half, dtype=np.float64)
    pad[half : half + L] = a.data
    out_np = np.zeros((L, F), dtype=np.float64)
    for k in range(K):
        seg = pad[k : k + L]
        out_np += seg[:, None] * Q.data[:, k][None, :]
    out = Tensor(out_np)

    def bwd(g):
        dpad = np.zeros_like(pad)
        dQ = np.zeros_like(Q.data)
        for k in range(K):
            dpad[k : k + L] += g @ Q.data[:, k]
            dQ[:, k] += g.T @ pad[k : k + L]
        _accumulate(Q, dQ)
        _accumulate(a, dpad[half : half + L])

    _record("conv1d_time", (Q, a), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor; it is run
    once under a fresh tape for the analytic gradients and twice per
    parameter entry (plain, unrecorded) for the numeric ones.  The relative
    error for one entry is |analytic - numeric| / max(|analytic|, |numeric|,
    1e-8).
    """
    if not (0.0 < eps <= 1e-2):
        raise DomainError(f"grad_check: eps must be in (0, 1e-2], got {eps}")
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as t:
        out = f()
    if out.data.shape != ():
        raise DomainError("grad_check: f must return a scalar")
    t.backward(out)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst

"""Fused sequence kernels for the recurrent layers, with two backends.

The per-timestep recurrence is the hot loop of the whole package: it cannot
be vectorized across time, so running it one tape primitive at a time would
drown in interpreter overhead.  The full-sequence forward pass and its
backpropagation-through-time are therefore implemented as single kernels.

Both kernels exist in two flavours compiled from the same source:

* ``numba`` - ``@njit``-compiled (default when numba imports cleanly);
* ``numpy`` - the plain Python function, one vectorized step at a time.

Select with the ``ARSG_BACKEND`` environment variable (``numba`` or
``numpy``) or programmatically with :func:`set_backend`.  The two paths
agree to ~1e-10 (libm vs numpy transcendentals), and each is individually
deterministic run to run.  ``benchmarks/bench_backends.py`` compares them.

Kernel ``mode`` argument: 0 = plain LSTMP, 1 = highway carry from the cell
sequence of the layer below, 2 = highway carry from the layer input.
Unused parameter slots are passed as zero-size arrays.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

__all__ = ["backend", "set_backend", "available_backends", "layer_forward", "layer_backward"]


def _layer_forward(X, BC, mode,
                   W_xi, W_xf, W_xc, W_xo,
                   W_mi, W_mf, W_mc, W_mo,
                   w_ci, w_cf, w_co,
                   b_i, b_f, b_c, b_o,
                   W_rm,
                   W_xd, w_d1, w_d2, b_d):
    L = X.shape[0]
    cell = W_xi.shape[0]
    proj = W_rm.shape[0]
    I = np.empty((L, cell))
    F = np.empty((L, cell))
    G = np.empty((L, cell))
    O = np.empty((L, cell))
    D = np.zeros((L, cell))
    C = np.empty((L, cell))
    TC = np.empty((L, cell))
    R = np.empty((L, proj))
    c_prev = np.zeros(cell)
    r_prev = np.zeros(proj)
    for t in range(L):
        x = X[t]
        i_t = 1.0 / (1.0 + np.exp(-(np.dot(W_xi, x) + np.dot(W_mi, r_prev) + w_ci * c_prev + b_i)))
        f_t = 1.0 / (1.0 + np.exp(-(np.dot(W_xf, x) + np.dot(W_mf, r_prev) + w_cf * c_prev + b_f)))
        g_t = np.tanh(np.dot(W_xc, x) + np.dot(W_mc, r_prev) + b_c)
        c_t = f_t * c_prev + i_t * g_t
        if mode == 1:
            d_t = 1.0 / (1.0 + np.exp(-(np.dot(W_xd, x) + w_d1 * c_prev + w_d2 * BC[t] + b_d)))
            c_t = c_t + d_t * BC[t]
            D[t] = d_t
        elif mode == 2:
            d_t = 1.0 / (1.0 + np.exp(-(np.dot(W_xd, x) + w_d1 * c_prev + b_d)))
            c_t = c_t + d_t * x
            D[t] = d_t
        tc_t = np.tanh(c_t)
        o_t = 1.0 / (1.0 + np.exp(-(np.dot(W_xo, x) + np.dot(W_mo, r_prev) + w_co * c_t + b_o)))
        r_t = np.dot(W_rm, o_t * tc_t)
        I[t] = i_t
        F[t] = f_t
        G[t] = g_t
        O[t] = o_t
        C[t] = c_t
        TC[t] = tc_t
        R[t] = r_t
        c_prev = c_t
        r_prev = r_t
    return I, F, G, O, D, C, TC, R


def _layer_backward(X, BC, mode,
                    W_xi, W_xf, W_xc, W_xo,
                    W_mi, W_mf, W_mc, W_mo,
                    w_ci, w_cf, w_co,
                    W_rm,
                    W_xd, w_d1, w_d2,
                    I, F, G, O, D, C, TC, R,
                    dR_out, dC_out):
    L, in_dim = X.shape
    cell = I.shape[1]
    proj = R.shape[1]

    Cprev = np.zeros_like(C)
    Cprev[1:] = C[:-1]
    Rprev = np.zeros_like(R)
    Rprev[1:] = R[:-1]

    WrmT = np.ascontiguousarray(W_rm.T)
    WmiT = np.ascontiguousarray(W_mi.T)
    WmfT = np.ascontiguousarray(W_mf.T)
    WmcT = np.ascontiguousarray(W_mc.T)
    WmoT = np.ascontiguousarray(W_mo.T)
    WxiT = np.ascontiguousarray(W_xi.T)
    WxfT = np.ascontiguousarray(W_xf.T)
    WxcT = np.ascontiguousarray(W_xc.T)
    WxoT = np.ascontiguousarray(W_xo.T)
    WxdT = np.ascontiguousarray(W_xd.T)

    DA_I = np.empty((L, cell))
    DA_F = np.empty((L, cell))
    DA_G = np.empty((L, cell))
    DA_O = np.empty((L, cell))
    DA_D = np.zeros((L, cell))
    DR = np.empty((L, proj))
    dX = np.zeros((L, in_dim))
    dBC = np.zeros_like(BC)

    dc_rec = np.zeros(cell)
    dr_rec = np.zeros(proj)
    for t in range(L - 1, -1, -1):
        dr = dR_out[t] + dr_rec
        DR[t] = dr
        dm = np.dot(WrmT, dr)
        do = dm * TC[t]
        da_o = do * O[t] * (1.0 - O[t])
        dc = dC_out[t] + dc_rec + dm * O[t] * (1.0 - TC[t] * TC[t]) + w_co * da_o
        di = dc * G[t]
        df = dc * Cprev[t]
        dg = dc * I[t]
        da_i = di * I[t] * (1.0 - I[t])
        da_f = df * F[t] * (1.0 - F[t])
        da_g = dg * (1.0 - G[t] * G[t])
        if mode == 1:
            dd = dc * BC[t]
            da_d = dd * D[t] * (1.0 - D[t])
            dBC[t] += dc * D[t] + w_d2 * da_d
            DA_D[t] = da_d
        elif mode == 2:
            dd = dc * X[t]
            da_d = dd * D[t] * (1.0 - D[t])
            dX[t] += dc * D[t]
            DA_D[t] = da_d
        DA_I[t] = da_i
        DA_F[t] = da_f
        DA_G[t] = da_g
        DA_O[t] = da_o
        dc_rec = dc * F[t] + w_ci * da_i + w_cf * da_f
        dxt = np.dot(WxiT, da_i) + np.dot(WxfT, da_f) + np.dot(WxcT, da_g) + np.dot(WxoT, da_o)
        if mode != 0:
            dc_rec = dc_rec + w_d1 * DA_D[t]
            dxt = dxt + np.dot(WxdT, DA_D[t])
        dX[t] += dxt
        dr_rec = (np.dot(WmiT, da_i) + np.dot(WmfT, da_f)
                  + np.dot(WmcT, da_g) + np.dot(WmoT, da_o))

    DA_I_T = np.ascontiguousarray(DA_I.T)
    DA_F_T = np.ascontiguousarray(DA_F.T)
    DA_G_T = np.ascontiguousarray(DA_G.T)
    DA_O_T = np.ascontiguousarray(DA_O.T)
    dW_xi = np.dot(DA_I_T, X)
    dW_xf = np.dot(DA_F_T, X)
    dW_xc = np.dot(DA_G_T, X)
    dW_xo = np.dot(DA_O_T, X)
    dW_mi = np.dot(DA_I_T, Rprev)
    dW_mf = np.dot(DA_F_T, Rprev)
    dW_mc = np.dot(DA_G_T, Rprev)
    dW_mo = np.dot(DA_O_T, Rprev)
    dw_ci = (DA_I * Cprev).sum(0)
    dw_cf = (DA_F * Cprev).sum(0)
    dw_co = (DA_O * C).sum(0)
    db_i = DA_I.sum(0)
    db_f = DA_F.sum(0)
    db_c = DA_G.sum(0)
    db_o = DA_O.sum(0)
    dW_rm = np.dot(np.ascontiguousarray(DR.T), O * TC)
    if mode != 0:
        dW_xd = np.dot(np.ascontiguousarray(DA_D.T), X)
        dw_d1 = (DA_D * Cprev).sum(0)
        db_d = DA_D.sum(0)
    else:
        dW_xd = np.zeros_like(W_xd)
        dw_d1 = np.zeros_like(w_d1)
        db_d = np.zeros_like(w_d1)
    if mode == 1:
        dw_d2 = (DA_D * BC).sum(0)
    else:
        dw_d2 = np.zeros_like(w_d2)
    return (dX, dBC,
            dW_xi, dW_xf, dW_xc, dW_xo,
            dW_mi, dW_mf, dW_mc, dW_mo,
            dw_ci, dw_cf, dw_co,
            db_i, db_f, db_c, db_o,
            dW_rm,
            dW_xd, dw_d1, dw_d2, db_d)


_IMPLS = {"numpy": (_layer_forward, _layer_backward)}

try:
    from numba import njit

    _IMPLS["numba"] = (
        njit(cache=True)(_layer_forward),
        njit(cache=True)(_layer_backward),
    )
except ImportError:  # pragma: no cover - numba is a declared dependency
    pass

_requested = os.environ.get("ARSG_BACKEND", "").strip().lower()
_current: str | None = None


def available_backends():
    return sorted(_IMPLS)


def _resolve() -> str:
    global _current
    if _current is None:
        if _requested == "":
            _current = "numba" if "numba" in _IMPLS else "numpy"
        elif _requested in _IMPLS:
            _current = _requested
        else:
            raise ConfigError(
                f"ARSG_BACKEND={_requested!r} is not one of {available_backends()}"
            )
    return _current


def backend() -> str:
    """Name of the kernel backend in use."""
    return _resolve()


def set_backend(name: str):
    """Switch kernel backend (used by tests and the benchmark)."""
    global _current
    if name not in _IMPLS:
        raise ConfigError(f"unknown backend {name!r}; have {available_backends()}")
    _current = name


def layer_forward(*args):
    return _IMPLS[_resolve()][0](*args)


def layer_backward(*args):
    return _IMPLS[_resolve()][1](*args)

"""Content-based and location-aware attention over the encoded sequence.

Energies are computed for every frame (or only the frames of an active
window), normalized to an alignment with a stable softmax, and combined
into the context vector.  Windowing masks excluded frames with -inf
energy so the alignment keeps its full length with exact zeros outside
the window; the number of per-frame energy evaluations is tracked in
``SCORINGS`` so tests can assert the O(L + T*half_width) decode cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .tape import (Tensor, add, add_rowvec, affine, conv1d_time, dot, linear_rows,
                   matvec, mul, rows, scatter_window, softmax, tanh, vecmat)


class ScoringCounter:
    """Counts frame scorings (one energy evaluation for one frame)."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


SCORINGS = ScoringCounter()


@dataclass
class AttentionParams:
    """Energy-network weights; U and Q present exactly in location-aware mode."""

    W: Tensor
    V: Tensor
    b: Tensor
    w: Tensor
    U: Tensor | None = None
    Q: Tensor | None = None

    @property
    def location_aware(self) -> bool:
        return self.U is not None

    def named(self, prefix: str = "att.") -> dict[str, Tensor]:
        out = {prefix + "W": self.W, prefix + "V": self.V,
               prefix + "b": self.b, prefix + "w": self.w}
        if self.U is not None:
            out[prefix + "U"] = self.U
            out[prefix + "Q"] = self.Q
        return out

    @classmethod
    def init(cls, rng: np.random.Generator, att: int, dec_dim: int, enc_dim: int,
             num_filters: int = 8, kernel_width: int = 11,
             location_aware: bool = True) -> "AttentionParams":
        if location_aware and kernel_width % 2 == 0:
            raise ConfigError(f"kernel width must be odd, got {kernel_width}")

        def w(shape):
            return Tensor(rng.uniform(-0.05, 0.05, shape))

        return cls(
            W=w((att, dec_dim)), V=w((att, enc_dim)),
            b=Tensor(np.zeros(att)), w=w(att),
            U=w((att, num_filters)) if location_aware else None,
            Q=w((num_filters, kernel_width)) if location_aware else None,
        )


@dataclass
class AttentionState:
    """Previous alignment plus the optional active window (1-based, inclusive)."""

    alpha_prev: Tensor
    window: tuple[int, int] | None = None

    @classmethod
    def initial(cls, length: int) -> "AttentionState":
        """Uniform prior alignment before any output has been emitted."""
        return cls(alpha_prev=Tensor(np.full(length, 1.0 / length)), window=None)


def content_energy(p: AttentionParams, s_i: Tensor, h_l: Tensor) -> Tensor:
    """Scalar energy of one frame against the decoder state."""
    if s_i.data.shape != (p.W.data.shape[1],):
        raise ShapeError(f"decoder state {s_i.data.shape} vs W {p.W.data.shape}")
    pre = add(matvec(p.W, s_i), affine(p.V, h_l, p.b))
    return dot(p.w, tanh(pre))


def location_energy(p: AttentionParams, s_i: Tensor, h_l: Tensor, f_l: Tensor) -> Tensor:
    """Energy with the convolved-alignment feature vector f_l mixed in."""
    if not p.location_aware:
        raise ConfigError("location features need U and Q parameters")
    pre = add(add(matvec(p.W, s_i), affine(p.V, h_l, p.b)), matvec(p.U, f_l))
    return dot(p.w, tanh(pre))


def next_window(st: AttentionState, half_width: int, length: int) -> tuple[int, int]:
    """Window (1-based, inclusive) centered on the previous alignment peak.

    Ties in the alignment break toward the smaller index; bounds clip to
    [1, length].
    """
    if half_width < 1:
        raise ConfigError(f"half_width must be >= 1, got {half_width}")
    center = int(np.argmax(st.alpha_prev.data)) + 1
    return (max(1, center - half_width), min(length, center + half_width))


def align_and_context(p: AttentionParams, s_i: Tensor, h: Tensor,
                      st: AttentionState) -> tuple[Tensor, Tensor]:
    """Alignment over frames and the resulting context vector.

    Frames outside ``st.window`` get -inf energy before the softmax, so
    their alignment entries are exactly zero and the output shapes do not
    depend on the window.
    """
    L = h.data.shape[0]
    if st.alpha_prev.data.shape != (L,):
        raise ShapeError(
            f"previous alignment has length {st.alpha_prev.data.shape[0]}, "
            f"encoded sequence has {L} frames"
        )
    lo, hi = 1, L
    if st.window is not None:
        lo, hi = st.window
        if not (1 <= lo <= hi <= L):
            raise DomainError(f"window [{lo},{hi}] is empty or outside [1,{L}]")
    windowed = (lo, hi) != (1, L)

    feats = conv1d_time(p.Q, st.alpha_prev) if p.location_aware else None
    h_act = rows(h, lo - 1, hi) if windowed else h
    pre = linear_rows(h_act, p.V)
    if feats is not None:
        f_act = rows(feats, lo - 1, hi) if windowed else feats
        pre = add(pre, linear_rows(f_act, p.U))
    query = add(matvec(p.W, s_i), p.b)
    e = matvec(tanh(add_rowvec(pre, query)), p.w)
    SCORINGS.count += hi - lo + 1
    if windowed:
        e = scatter_window(e, L, lo - 1, -np.inf)
    alpha = softmax(e)
    context = vecmat(alpha, h)
    return alpha, context

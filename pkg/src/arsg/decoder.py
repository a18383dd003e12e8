"""Character decoder: embedding, single-layer LSTM recurrence, output head.

Each output step consumes the embedding of the previously emitted
character together with the previous context vector, updates the LSTM
state, attends over the encoded sequence with the new hidden state, and
emits a distribution over the vocabulary from an MLP on (hidden, context).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, AttentionState, align_and_context
from .errors import ShapeError
from .tape import (Tensor, add, affine, concat, matvec, mul, row, sigmoid,
                   slice_vec, softmax, tanh)


@dataclass
class DecoderParams:
    """Character embedding plus one standard LSTM layer.

    Gate weights are packed i|f|g|o along the first axis; the LSTM input is
    [embed(y_prev); context].
    """

    E: Tensor
    W_x: Tensor
    W_h: Tensor
    b: Tensor

    @property
    def dim(self) -> int:
        return self.W_h.data.shape[1]

    def named(self, prefix: str = "dec.") -> dict[str, Tensor]:
        return {prefix + "E": self.E, prefix + "W_x": self.W_x,
                prefix + "W_h": self.W_h, prefix + "b": self.b}

    @classmethod
    def init(cls, rng: np.random.Generator, vocab_size: int, dec_dim: int,
             enc_dim: int) -> "DecoderParams":
        def w(shape):
            return Tensor(rng.uniform(-0.05, 0.05, shape))

        b = np.zeros(4 * dec_dim)
        b[dec_dim : 2 * dec_dim] = 1.0  # forget gate open at init
        return cls(
            E=w((vocab_size, dec_dim)),
            W_x=w((4 * dec_dim, dec_dim + enc_dim)),
            W_h=w((4 * dec_dim, dec_dim)),
            b=Tensor(b),
        )


@dataclass
class DecoderState:
    """LSTM hidden/cell pair, last emitted character, last context vector."""

    h: Tensor
    c: Tensor
    y_prev: int
    context: Tensor

    @classmethod
    def initial(cls, dec_dim: int, sos: int, context: Tensor) -> "DecoderState":
        return cls(h=Tensor(np.zeros(dec_dim)), c=Tensor(np.zeros(dec_dim)),
                   y_prev=sos, context=context)


@dataclass
class OutputHead:
    """One tanh hidden layer and a softmax over the vocabulary."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    def named(self, prefix: str = "head.") -> dict[str, Tensor]:
        return {prefix + "W1": self.W1, prefix + "b1": self.b1,
                prefix + "W2": self.W2, prefix + "b2": self.b2}

    @classmethod
    def init(cls, rng: np.random.Generator, dec_dim: int, enc_dim: int,
             vocab_size: int) -> "OutputHead":
        def w(shape):
            return Tensor(rng.uniform(-0.05, 0.05, shape))

        return cls(W1=w((dec_dim, dec_dim + enc_dim)), b1=Tensor(np.zeros(dec_dim)),
                   W2=w((vocab_size, dec_dim)), b2=Tensor(np.zeros(vocab_size)))


def output_logits(head: OutputHead, s_i: Tensor, c_i: Tensor) -> Tensor:
    hidden = tanh(affine(head.W1, concat([s_i, c_i]), head.b1))
    return affine(head.W2, hidden, head.b2)


def output_distribution(head: OutputHead, s_i: Tensor, c_i: Tensor) -> Tensor:
    """Probability vector over the vocabulary for the next character."""
    return softmax(output_logits(head, s_i, c_i))


def decoder_step(dec: DecoderParams, ap: AttentionParams, st: DecoderState,
                 h_enc: Tensor, at: AttentionState) -> tuple[DecoderState, Tensor, Tensor]:
    """One recurrence step: LSTM update, then attention with the new state.

    Consumes ``st.y_prev`` and ``st.context``; returns the successor state
    (same ``y_prev`` - the caller decides what was emitted), the new
    alignment and the new context.  ``at.alpha_prev`` is advanced to the
    new alignment.
    """
    if not (0 <= st.y_prev < dec.E.data.shape[0]):
        raise ShapeError(f"character index {st.y_prev} outside the embedding table")
    d = dec.dim
    x = concat([row(dec.E, st.y_prev), st.context])
    gates = add(affine(dec.W_x, x, dec.b), matvec(dec.W_h, st.h))
    i = sigmoid(slice_vec(gates, 0, d))
    f = sigmoid(slice_vec(gates, d, 2 * d))
    g = tanh(slice_vec(gates, 2 * d, 3 * d))
    o = sigmoid(slice_vec(gates, 3 * d, 4 * d))
    c_new = add(mul(f, st.c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    alpha, context = align_and_context(ap, h_new, h_enc, at)
    at.alpha_prev = alpha
    return DecoderState(h=h_new, c=c_new, y_prev=st.y_prev, context=context), alpha, context

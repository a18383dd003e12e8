"""The full recognizer: encoder + attention + character decoder.

Also home to the whole-model operations: the training loss (negative
log-likelihood with scheduled sampling), greedy decoding, and state
initialization shared by every decode strategy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionParams, AttentionState, align_and_context
from .data import MultichannelUtterance, Vocabulary, encode_transcript
from .decoder import (DecoderParams, DecoderState, OutputHead, decoder_step,
                      output_logits)
from .encoder import Encoder
from .errors import ConfigError, DataError, DomainError
from .tape import Tensor, add, cross_entropy_logits, softmax_np


@dataclass
class ModelConfig:
    vocab: str = "abcdefgh"
    channels: int = 2
    feat_dim: int = 16
    enc_layers: int = 3
    cell: int = 64
    proj: int = 32
    att_dim: int = 64
    att_filters: int = 8
    att_kernel: int = 11
    dec_dim: int = 64
    location_aware: bool = True
    first_layer_carry: bool = False
    encoder_readout_dim: int | None = None
    min_char_duration: int = 3

    def validate(self):
        if not self.vocab:
            raise ConfigError("model vocabulary is empty")
        for name in ("channels", "feat_dim", "enc_layers", "cell", "proj", "att_dim",
                     "dec_dim", "min_char_duration"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model config: {name} must be >= 1")
        if self.proj > self.cell:
            raise ConfigError(f"proj {self.proj} exceeds cell {self.cell}")
        if self.location_aware:
            if self.att_filters < 1:
                raise ConfigError("location-aware attention needs at least one filter")
            if self.att_kernel % 2 == 0:
                raise ConfigError("attention kernel width must be odd")


class Model:
    def __init__(self, config: ModelConfig, vocab: Vocabulary, encoder: Encoder,
                 att: AttentionParams, dec: DecoderParams, head: OutputHead):
        self.config = config
        self.vocab = vocab
        self.encoder = encoder
        self.att = att
        self.dec = dec
        self.head = head

    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0) -> "Model":
        config.validate()
        rng = np.random.default_rng(seed)
        vocab = Vocabulary(config.vocab)
        enc = Encoder.build(rng, config.channels * config.feat_dim, config.enc_layers,
                            config.cell, config.proj,
                            first_layer_carry=config.first_layer_carry,
                            readout_dim=config.encoder_readout_dim)
        att = AttentionParams.init(rng, config.att_dim, config.dec_dim, enc.output_dim,
                                   num_filters=config.att_filters,
                                   kernel_width=config.att_kernel,
                                   location_aware=config.location_aware)
        dec = DecoderParams.init(rng, vocab.size, config.dec_dim, enc.output_dim)
        head = OutputHead.init(rng, config.dec_dim, enc.output_dim, vocab.size)
        return cls(config, vocab, enc, att, dec, head)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.encoder.named())
        out.update(self.att.named())
        out.update(self.dec.named())
        out.update(self.head.named())
        return out

    def zero_grads(self):
        for t in self.parameters().values():
            t.grad = None

    def default_max_len(self, num_frames: int) -> int:
        return max(1, math.ceil(4 * num_frames / self.config.min_char_duration))


def init_decode_state(model: Model, h: Tensor) -> tuple[DecoderState, AttentionState]:
    """Zero decoder state plus the first context vector.

    The prior alignment is uniform over the frames; the initial attention
    call always runs over the full range (there is no peak to window on
    yet) and its alignment becomes the previous alignment for step 1.
    """
    L = h.data.shape[0]
    at = AttentionState.initial(L)
    s0 = Tensor(np.zeros(model.config.dec_dim))
    alpha0, c0 = align_and_context(model.att, s0, h, at)
    at.alpha_prev = alpha0
    st = DecoderState.initial(model.config.dec_dim, model.vocab.sos, c0)
    return st, at


@dataclass
class SamplingStats:
    """Counts scheduled-sampling decisions (for rate audits)."""

    sampled: int = 0
    eligible: int = 0


def sequence_loss(model: Model, u: MultichannelUtterance, sampling_rate: float,
                  rng: np.random.Generator | None = None,
                  stats: SamplingStats | None = None) -> Tensor:
    """Negative log-likelihood of the transcript (EOS appended).

    The input character at each step is the ground-truth previous character
    with probability 1 - sampling_rate, otherwise a draw from the previous
    step's predicted distribution.  With sampling_rate = 0 the result is a
    deterministic function of parameters and data.
    """
    if not (0.0 <= sampling_rate <= 1.0):
        raise DomainError(f"sampling_rate must be in [0,1], got {sampling_rate}")
    if sampling_rate > 0.0 and rng is None:
        raise DomainError("sampling_rate > 0 needs an RNG")
    if not u.transcript:
        raise DataError(f"utterance {u.id}: empty transcript")
    targets = encode_transcript_checked(model.vocab, u)
    h = model.encoder.encode(u)
    st, at = init_decode_state(model, h)
    loss = None
    prev_probs = None
    for i, tgt in enumerate(targets):
        if i == 0:
            st.y_prev = model.vocab.sos
        else:
            if stats is not None:
                stats.eligible += 1
            if sampling_rate > 0.0 and rng.random() < sampling_rate:
                st.y_prev = int(rng.choice(len(prev_probs), p=prev_probs))
                if stats is not None:
                    stats.sampled += 1
            else:
                st.y_prev = targets[i - 1]
        st, _, context = decoder_step(model.dec, model.att, st, h, at)
        logits = output_logits(model.head, st.h, context)
        step_loss = cross_entropy_logits(logits, tgt)
        loss = step_loss if loss is None else add(loss, step_loss)
        if sampling_rate > 0.0:
            prev_probs = softmax_np(logits.data)
    if not np.isfinite(loss.data):
        raise DataError(f"utterance {u.id}: non-finite loss")
    return loss


def encode_transcript_checked(vocab: Vocabulary, u: MultichannelUtterance):
    try:
        return encode_transcript(vocab, u.transcript)
    except DataError as e:
        raise DataError(f"utterance {u.id}: {e}") from None


def greedy_decode(model: Model, u: MultichannelUtterance, max_len: int | None = None,
                  half_width: int | None = None) -> str:
    """Argmax decoding until EOS or the length budget runs out.

    SOS is never emitted.  With ``half_width`` set, attention after the
    initial call is restricted to a window around the previous alignment
    peak.
    """
    from .attention import next_window

    h = model.encoder.encode(u)
    L = h.data.shape[0]
    if max_len is None:
        max_len = model.default_max_len(L)
    st, at = init_decode_state(model, h)
    out = []
    prev = model.vocab.sos
    for _ in range(max_len):
        if half_width is not None:
            at.window = next_window(at, half_width, L)
        st.y_prev = prev
        st, _, context = decoder_step(model.dec, model.att, st, h, at)
        logits = output_logits(model.head, st.h, context).data.copy()
        logits[model.vocab.sos] = -np.inf
        y = int(np.argmax(logits))
        if y == model.vocab.eos:
            break
        out.append(model.vocab.symbols[y])
        prev = y
    return "".join(out)

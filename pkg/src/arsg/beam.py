"""Beam search over characters with log-linear language-model fusion.

Hypotheses carry separate acoustic and LM log-score components; the
search ranks by ``am + beta * lm`` (plus an optional per-character length
bonus, off by default).  EOS extensions compete for beam slots like any
other symbol; a finished hypothesis that wins a slot retires to a pool,
and the final answer is the pool argmax with deterministic lexicographic
tie-breaking.  With beam = 1 and beta = 0 the search follows exactly the
greedy argmax path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionState, next_window
from .data import MultichannelUtterance
from .decoder import decoder_step, output_logits
from .errors import ConfigError, DomainError
from .lm import NgramLm
from .model import Model, init_decode_state


@dataclass
class Hypothesis:
    prefix: list[int]
    am_logp: float
    lm_logp: float
    state: object
    alpha_prev: object
    finished: bool = False


def fused_score(h: Hypothesis, beta: float, gamma: float = 0.0) -> float:
    """Log-linear combination of the acoustic and LM scores."""
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    return h.am_logp + beta * h.lm_logp + gamma * len(h.prefix)


@dataclass
class DecodeResult:
    transcript: str
    am_logp: float
    lm_logp: float
    fused: float


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


def _lm_index_map(model: Model, lm: NgramLm) -> list[int]:
    missing = [s for s in model.vocab.symbols if s not in lm.vocab.index]
    if missing:
        raise ConfigError(
            f"model symbols {missing} are absent from the language model vocabulary"
        )
    return [lm.vocab.index[s] for s in model.vocab.symbols]


def beam_search_decode(model: Model, lm: NgramLm | None, u: MultichannelUtterance,
                       beam: int, beta: float, gamma: float = 0.0,
                       max_len: int | None = None,
                       half_width: int | None = None) -> DecodeResult:
    """Best transcript under the fused score, with its score components."""
    if beam < 1:
        raise ConfigError(f"beam width must be >= 1, got {beam}")
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    use_lm = beta > 0
    if use_lm:
        if lm is None:
            raise ConfigError("beta > 0 needs a language model")
        to_lm = _lm_index_map(model, lm)

    h_enc = model.encoder.encode(u)
    L = h_enc.data.shape[0]
    if max_len is None:
        max_len = model.default_max_len(L)
    st0, at0 = init_decode_state(model, h_enc)
    live = [Hypothesis([], 0.0, 0.0, st0, at0.alpha_prev)]
    pool: list[Hypothesis] = []
    sos, eos = model.vocab.sos, model.vocab.eos

    def key(h: Hypothesis):
        return (-fused_score(h, beta, gamma), tuple(h.prefix))

    for _ in range(max_len):
        candidates = []
        for hyp in live:
            at = AttentionState(alpha_prev=hyp.alpha_prev)
            if half_width is not None:
                at.window = next_window(at, half_width, L)
            st = hyp.state
            st.y_prev = hyp.prefix[-1] if hyp.prefix else sos
            st2, alpha, context = decoder_step(model.dec, model.att, st, h_enc, at)
            logp = _log_softmax(output_logits(model.head, st2.h, context).data)
            if use_lm:
                ctx = lm.context_of([to_lm[i] for i in hyp.prefix])
            for y in range(model.vocab.size):
                if y == sos:
                    continue
                lm_inc = lm.logprob(ctx, to_lm[y]) if use_lm else 0.0
                candidates.append(Hypothesis(
                    prefix=hyp.prefix + [y],
                    am_logp=hyp.am_logp + float(logp[y]),
                    lm_logp=hyp.lm_logp + lm_inc,
                    state=st2,
                    alpha_prev=alpha,
                    finished=(y == eos),
                ))
        if not candidates:
            break
        candidates.sort(key=key)
        live = []
        for h in candidates[:beam]:
            (pool if h.finished else live).append(h)
        if not live:
            break
        if pool and gamma <= 0.0:
            # per-step increments are <= 0, so once every live hypothesis
            # scores strictly below the pool best nothing can improve
            best_pool = -min(key(h)[0] for h in pool)
            best_live = -min(key(h)[0] for h in live)
            if best_live < best_pool:
                break
    pool.extend(live)  # length budget exhausted; retire as-is
    best = min(pool, key=key)
    return DecodeResult(
        transcript=model.vocab.decode(best.prefix),
        am_logp=best.am_logp,
        lm_logp=best.lm_logp,
        fused=fused_score(best, beta, gamma),
    )


def exhaustive_search(model: Model, lm: NgramLm | None, u: MultichannelUtterance,
                      beta: float, gamma: float = 0.0,
                      max_len: int = 4) -> DecodeResult:
    """Score every output sequence up to the length budget and take the argmax.

    Brute force, usable only on tiny vocabularies/budgets; serves as the
    search-correctness oracle for beam_search_decode.
    """
    use_lm = beta > 0
    if use_lm:
        if lm is None:
            raise ConfigError("beta > 0 needs a language model")
        to_lm = _lm_index_map(model, lm)
    h_enc = model.encoder.encode(u)
    L = h_enc.data.shape[0]
    sos, eos = model.vocab.sos, model.vocab.eos
    leaves: list[Hypothesis] = []

    def expand(prefix, am, lmp, st, alpha_prev, depth):
        at = AttentionState(alpha_prev=alpha_prev)
        st.y_prev = prefix[-1] if prefix else sos
        st2, alpha, context = decoder_step(model.dec, model.att, st, h_enc, at)
        logp = _log_softmax(output_logits(model.head, st2.h, context).data)
        ctx = lm.context_of([to_lm[i] for i in prefix]) if use_lm else None
        for y in range(model.vocab.size):
            if y == sos:
                continue
            am2 = am + float(logp[y])
            lm2 = lmp + (lm.logprob(ctx, to_lm[y]) if use_lm else 0.0)
            h = Hypothesis(prefix + [y], am2, lm2, None, None, finished=(y == eos))
            if y == eos or depth + 1 == max_len:
                leaves.append(h)
            else:
                expand(prefix + [y], am2, lm2, st2, alpha, depth + 1)

    st0, at0 = init_decode_state(model, h_enc)
    expand([], 0.0, 0.0, st0, at0.alpha_prev, 0)
    best = min(leaves, key=lambda h: (-fused_score(h, beta, gamma), tuple(h.prefix)))
    return DecodeResult(
        transcript=model.vocab.decode(best.prefix),
        am_logp=best.am_logp,
        lm_logp=best.lm_logp,
        fused=fused_score(best, beta, gamma),
    )

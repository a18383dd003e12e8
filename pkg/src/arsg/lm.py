"""Character n-gram language model with add-k smoothing.

Contexts are padded with SOS on the left.  The event space is every
vocabulary symbol except SOS (characters plus EOS); corpus strings
contribute counts for their characters only, so EOS receives probability
mass through smoothing alone.  Models are immutable after training and
safe to share between decodes; ``queries`` counts log-probability lookups
so tests can assert that a beta = 0 decode never touches the model.

Text serialization: a ``NGRAM-LM v1 n=<n> k=<k>`` header, then one
tab-separated line per (context, symbol, logprob) for every observed
context and every event symbol, log-probs written as fixed decimals with
12 significant digits.  Unseen contexts score uniformly over the event
space, which needs no table entries.
"""

from __future__ import annotations

import math
import re

import numpy as np

from .data import EOS, SOS, Vocabulary
from .errors import ConfigError, DataError, DomainError, FormatError, ParseError


class NgramLm:
    def __init__(self, n: int, k: float, vocab: Vocabulary,
                 table: dict[tuple[int, ...], np.ndarray]):
        self.n = n
        self.k = k
        self.vocab = vocab
        self.table = table
        # event space excludes SOS; -inf marks the SOS slot in every row
        self.num_events = vocab.size - 1
        self.uniform = -math.log(self.num_events)
        self.queries = 0

    def context_of(self, prefix) -> tuple[int, ...]:
        """The last n-1 symbols of ``prefix``, left-padded with SOS."""
        if self.n == 1:
            return ()
        ctx = [self.vocab.sos] * (self.n - 1) + list(prefix)
        return tuple(ctx[-(self.n - 1):])

    def logprob(self, context: tuple[int, ...], y: int) -> float:
        """log P(y | context) for one event symbol (never SOS)."""
        self.queries += 1
        if y == self.vocab.sos:
            raise DomainError("SOS is not a predictable event")
        vec = self.table.get(context)
        if vec is None:
            return self.uniform
        return float(vec[y])

    def sequence_logprob(self, symbols) -> float:
        """Chain-rule log-probability of a symbol index sequence."""
        total = 0.0
        prefix = []
        for y in symbols:
            total += self.logprob(self.context_of(prefix), y)
            prefix.append(y)
        return total


def train_ngram(corpus, n: int, k: float, vocab: Vocabulary | None = None) -> NgramLm:
    """Estimate an order-n model with add-k smoothing from transcript strings.

    When no vocabulary is given it is derived from the corpus characters.
    Corpus characters outside a given vocabulary raise a data error.
    """
    corpus = list(corpus)
    if n < 1:
        raise ConfigError(f"order must be >= 1, got {n}")
    if not k > 0:
        raise ConfigError(f"smoothing constant must be > 0, got {k}")
    if not corpus:
        raise ConfigError("empty corpus")
    if vocab is None:
        vocab = Vocabulary("".join(sorted(set("".join(corpus)))))
    counts: dict[tuple[int, ...], np.ndarray] = {}
    for s in corpus:
        idxs = [vocab.char_index(ch, pos=i, context=repr(s)) for i, ch in enumerate(s)]
        history = [vocab.sos] * (n - 1)
        for y in idxs:
            ctx = tuple(history[-(n - 1):]) if n > 1 else ()
            row = counts.get(ctx)
            if row is None:
                row = counts[ctx] = np.zeros(vocab.size)
            row[y] += 1.0
            history.append(y)
    table = {}
    num_events = vocab.size - 1
    for ctx, row in counts.items():
        total = row.sum()
        logp = np.log((row + k) / (total + k * num_events))
        logp[vocab.sos] = -np.inf
        table[ctx] = logp
    return NgramLm(n, k, vocab, table)


_HEADER = re.compile(r"^NGRAM-LM v1 n=(\d+) k=([0-9.eE+-]+)$")


def _fixed12(x: float) -> str:
    return np.format_float_positional(x, precision=12, unique=False, fractional=False)


def save_lm(path, lm: NgramLm):
    if not lm.table:
        raise DataError("refusing to serialize a model with no observed contexts "
                        "(the vocabulary could not be recovered)")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"NGRAM-LM v1 n={lm.n} k={lm.k!r}\n")
        for ctx in sorted(lm.table):
            ctx_str = "".join(lm.vocab.symbols[i] for i in ctx)
            vec = lm.table[ctx]
            for y in range(lm.vocab.size):
                if y == lm.vocab.sos:
                    continue
                fh.write(f"{ctx_str}\t{lm.vocab.symbols[y]}\t{_fixed12(vec[y])}\n")


def _parse_symbols(s: str, where: str):
    out = []
    i = 0
    while i < len(s):
        if s.startswith(SOS, i):
            out.append(SOS)
            i += len(SOS)
        elif s.startswith(EOS, i):
            out.append(EOS)
            i += len(EOS)
        else:
            out.append(s[i])
            i += 1
    return out


def load_lm(path) -> NgramLm:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        m = _HEADER.match(header)
        if m is None:
            raise FormatError(f"{path}: bad header {header!r}")
        n, k = int(m.group(1)), float(m.group(2))
        entries = []
        chars = set()
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
            ctx_syms = _parse_symbols(parts[0], f"{path}:{lineno}")
            sym = parts[1]
            try:
                logp = float(parts[2])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad log-probability {parts[2]!r}") from None
            entries.append((ctx_syms, sym, logp))
            for s in ctx_syms + [sym]:
                if s not in (SOS, EOS):
                    chars.add(s)
    if not entries:
        raise FormatError(f"{path}: no table entries")
    vocab = Vocabulary("".join(sorted(chars)))
    table: dict[tuple[int, ...], np.ndarray] = {}
    for ctx_syms, sym, logp in entries:
        ctx = tuple(vocab.index[s] for s in ctx_syms)
        row = table.get(ctx)
        if row is None:
            row = table[ctx] = np.full(vocab.size, -np.inf)
        row[vocab.index[sym]] = logp
    return NgramLm(n, k, vocab, table)

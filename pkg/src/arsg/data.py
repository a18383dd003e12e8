"""Synthetic multichannel dataset generation, dataset/vocabulary I/O.

An utterance is one source character stream rendered into N feature
channels.  Each character owns a fixed prototype vector derived from the
seed; the clean stream repeats prototypes for a per-character duration,
and channel i sees that stream delayed by ``delays[i]`` frames (zero
padded) plus Gaussian noise of ``noise_std[i]``.  Everything is
reproducible from the config seed alone: per-utterance RNG streams come
from spawned seed sequences, so generation order (or thread count) cannot
change the result.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ParseError

SOS = "<sos>"
EOS = "<eos>"


class Vocabulary:
    """Ordered symbol set: ``<sos>``, ``<eos>``, then the characters."""

    def __init__(self, characters: str):
        if len(set(characters)) != len(characters):
            raise ConfigError(f"duplicate characters in vocabulary {characters!r}")
        if any(len(ch) != 1 for ch in characters):
            raise ConfigError("vocabulary entries must be single characters")
        self.symbols = [SOS, EOS] + list(characters)
        self.characters = characters
        self.index = {s: i for i, s in enumerate(self.symbols)}
        self.sos = 0
        self.eos = 1

    @property
    def size(self) -> int:
        return len(self.symbols)

    def char_index(self, ch: str, pos: int | None = None, context: str = "") -> int:
        try:
            return self.index[ch]
        except KeyError:
            where = f" at position {pos}" if pos is not None else ""
            ctx = f" in {context}" if context else ""
            raise DataError(f"character {ch!r}{where}{ctx} is not in the vocabulary") from None

    def decode(self, indices) -> str:
        out = []
        for i in indices:
            if i == self.eos:
                break
            if i != self.sos:
                out.append(self.symbols[i])
        return "".join(out)


def encode_transcript(v: Vocabulary, s: str):
    """Character indices of ``s`` plus a terminal EOS."""
    out = [v.char_index(ch, pos=i) for i, ch in enumerate(s)]
    out.append(v.eos)
    return out


def write_vocab(path, v: Vocabulary):
    with open(path, "w", encoding="utf-8") as fh:
        for s in v.symbols:
            fh.write(s + "\n")


def read_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln != ""]
    if lines[:2] != [SOS, EOS]:
        raise ParseError(f"vocabulary file must start with {SOS} and {EOS} lines")
    return Vocabulary("".join(lines[2:]))


@dataclass
class MultichannelUtterance:
    """N feature-frame sequences (each [L,D]) plus a character transcript."""

    id: str
    channels: list[np.ndarray]
    transcript: str

    def __post_init__(self):
        if not self.channels:
            raise DataError(f"utterance {self.id}: no channels")
        shapes = {ch.shape for ch in self.channels}
        if len(shapes) != 1:
            raise DataError(
                f"utterance {self.id}: channels have inconsistent shapes {sorted(shapes)}"
            )

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    @property
    def num_frames(self) -> int:
        return self.channels[0].shape[0]

    @property
    def feat_dim(self) -> int:
        return self.channels[0].shape[1]


@dataclass
class SynthConfig:
    seed: int = 0
    channels: int = 2
    feat_dim: int = 16
    vocab: str = "abcdefgh"
    duration_range: tuple[int, int] = (3, 6)
    delays: list[int] = field(default_factory=lambda: [0, 2])
    noise_std: list[float] = field(default_factory=lambda: [0.1, 0.3])
    utterances: int = 64
    length_range: tuple[int, int] = (5, 12)

    def validate(self):
        if self.channels < 1:
            raise ConfigError("need at least one channel")
        if len(self.delays) != self.channels or len(self.noise_std) != self.channels:
            raise ConfigError(
                f"delays ({len(self.delays)}) and noise_std ({len(self.noise_std)}) "
                f"must list one entry per channel ({self.channels})"
            )
        if any(d < 0 for d in self.delays):
            raise ConfigError("delays must be >= 0")
        if any(s < 0 for s in self.noise_std):
            raise ConfigError("noise stddevs must be >= 0")
        lo, hi = self.duration_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"bad duration range {self.duration_range}")
        lo, hi = self.length_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"bad transcript length range {self.length_range}")
        if not self.vocab:
            raise ConfigError("empty vocabulary")


def _worker_count() -> int:
    raw = os.environ.get("ARSG_THREADS", "1").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ARSG_THREADS={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"ARSG_THREADS must be >= 1, got {n}")
    return n


def synthesize(cfg: SynthConfig) -> list[MultichannelUtterance]:
    """Generate the dataset described by ``cfg``, reproducibly from its seed."""
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    streams = root.spawn(cfg.utterances + 1)
    proto_rng = np.random.default_rng(streams[0])
    protos = {ch: proto_rng.uniform(-1.0, 1.0, cfg.feat_dim) for ch in cfg.vocab}
    max_delay = max(cfg.delays)

    def build(i: int) -> MultichannelUtterance:
        rng = np.random.default_rng(streams[i + 1])
        n_chars = int(rng.integers(cfg.length_range[0], cfg.length_range[1] + 1))
        chars = [cfg.vocab[int(rng.integers(len(cfg.vocab)))] for _ in range(n_chars)]
        lo, hi = cfg.duration_range
        frames = []
        for ch in chars:
            dur = int(rng.integers(lo, hi + 1))
            frames.extend([protos[ch]] * dur)
        clean = np.array(frames)
        L = clean.shape[0] + max_delay
        channels = []
        for d, std in zip(cfg.delays, cfg.noise_std):
            buf = np.zeros((L, cfg.feat_dim))
            buf[d : d + clean.shape[0]] = clean
            if std > 0:
                buf = buf + rng.normal(0.0, std, buf.shape)
            channels.append(buf)
        return MultichannelUtterance(id=f"utt{i:05d}", channels=channels,
                                     transcript="".join(chars))

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, range(cfg.utterances)))
    return [build(i) for i in range(cfg.utterances)]


def write_dataset(path, utterances):
    """One utterance per line: {"id", "transcript", "channels"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for u in utterances:
            rec = {
                "id": u.id,
                "transcript": u.transcript,
                "channels": [ch.tolist() for ch in u.channels],
            }
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path) -> list[MultichannelUtterance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{lineno}: not valid JSON ({e.msg})") from None
            try:
                uid = rec["id"]
                channels = [np.asarray(ch, dtype=np.float64) for ch in rec["channels"]]
                transcript = rec["transcript"]
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"{path}:{lineno}: malformed record ({e})") from None
            for ch in channels:
                if ch.ndim != 2:
                    raise DataError(f"utterance {uid}: channel is not a frame matrix")
            out.append(MultichannelUtterance(id=uid, channels=channels,
                                             transcript=transcript))
    return out

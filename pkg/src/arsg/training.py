"""Mini-batch training of the sequence loss, metrics, checkpointing.

The optimizer is adaptive-moment estimation with bias correction; gradient
clipping is by global norm over all parameters in a fixed name order, so a
run is bitwise reproducible from its seed.  A batch is a list of
utterances processed independently; the objective is the summed
per-utterance negative log-likelihood divided by the total character count
(loss per character).

Checkpoints are little-endian binary: magic ``ARSG``, u32 version, a named
float32 tensor table (model parameters and optimizer moments), then one
length-prefixed JSON blob holding the configs, update counter and RNG
state, which is enough to resume a run on the same trajectory to float32
replay precision.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .data import MultichannelUtterance, encode_transcript
from .errors import (ConfigError, DataError, DomainError, FormatError,
                     IntegrityError, TrainingError)
from .model import Model, ModelConfig, greedy_decode, sequence_loss
from .tape import Tape, Tensor, mul, vsum


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0
    batch_size: int = 8
    max_updates: int = 2000
    sampling_rate: float = 0.1
    seed: int = 0
    eval_interval: int = 50
    early_stop_acc: float | None = None
    early_stop_cer: float | None = None

    def validate(self):
        for name in ("lr", "beta1", "beta2", "eps", "clip"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"train config: {name} must be positive")
        if self.beta1 >= 1 or self.beta2 >= 1:
            raise ConfigError("train config: betas must be < 1")
        for name in ("batch_size", "max_updates", "eval_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train config: {name} must be >= 1")
        if not (0.0 <= self.sampling_rate <= 1.0):
            raise ConfigError("train config: sampling_rate must be in [0,1]")


class Adam:
    """Adaptive-moment optimizer over a named parameter table."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else 0.0
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for name in sorted(params):
        g = params[name].grad
        if g is not None:
            total += float((g * g).sum())
    return math.sqrt(total)


def clip_gradients(params: dict[str, Tensor], clip: float) -> float:
    """Scale all gradients so the global norm is at most ``clip``.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    if norm > clip:
        scale = clip / norm
        for name in sorted(params):
            if params[name].grad is not None:
                params[name].grad *= scale
    return norm


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[len(b)]


def cer(ref: str, hyp: str) -> float:
    """Character error rate: edit distance over reference length."""
    if not ref:
        raise DomainError("reference transcript is empty")
    return levenshtein(ref, hyp) / len(ref)


def corpus_cer(refs, hyps) -> float:
    refs, hyps = list(refs), list(hyps)
    if len(refs) != len(hyps):
        raise DataError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    total_len = sum(len(r) for r in refs)
    if total_len == 0:
        raise DomainError("all references are empty")
    return sum(levenshtein(r, h) for r, h in zip(refs, hyps)) / total_len


def teacher_forced_accuracy(model: Model, utts) -> float:
    """Fraction of next-character argmaxes that hit the target (no sampling)."""
    from .decoder import decoder_step, output_logits
    from .model import init_decode_state

    correct = 0
    total = 0
    for u in utts:
        targets = encode_transcript(model.vocab, u.transcript)
        h = model.encoder.encode(u)
        st, at = init_decode_state(model, h)
        for i, tgt in enumerate(targets):
            st.y_prev = model.vocab.sos if i == 0 else targets[i - 1]
            st, _, context = decoder_step(model.dec, model.att, st, h, at)
            logits = output_logits(model.head, st.h, context)
            correct += int(np.argmax(logits.data) == tgt)
            total += 1
    return correct / total if total else 0.0


def highway_bottom_grad_norm(enc, u: MultichannelUtterance) -> float:
    """Gradient norm of the bottom layer's weights for a sum-of-squares loss."""
    bottom = {}
    bottom.update(enc.layers[0].fwd.named("fwd."))
    bottom.update(enc.layers[0].bwd.named("bwd."))
    for t in enc.named().values():
        t.grad = None
    with Tape() as tape:
        h = enc.encode(u)
        loss = vsum(mul(h, h))
    tape.backward(loss)
    return global_grad_norm(bottom)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    history: list          # (update, loss, grad_norm)
    evals: list            # (update, accuracy, cer-or-None)
    final_update: int
    stopped_early: bool


def train(model: Model, dataset, cfg: TrainConfig, eval_data=None,
          adam: Adam | None = None, rng: np.random.Generator | None = None,
          start_update: int = 0, log_path=None) -> TrainResult:
    """Run updates ``start_update+1 .. max_updates`` (or to early stop)."""
    cfg.validate()
    dataset = list(dataset)
    if not dataset:
        raise DataError("training dataset is empty")
    params = model.parameters()
    if adam is None:
        adam = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if eval_data is None:
        eval_data = dataset

    history = []
    evals = []
    order: list[int] = []
    stopped = False
    update = start_update
    while update < cfg.max_updates:
        update += 1
        batch = []
        for _ in range(cfg.batch_size):
            if not order:
                order = list(rng.permutation(len(dataset)))
            batch.append(dataset[order.pop(0)])
        total_chars = sum(len(u.transcript) + 1 for u in batch)
        model.zero_grads()
        batch_loss = 0.0
        for u in batch:
            try:
                with Tape() as tape:
                    loss = sequence_loss(model, u, cfg.sampling_rate, rng=rng)
            except DataError as e:
                raise TrainingError(f"update {update}: {e}") from None
            tape.backward(loss, seed=1.0 / total_chars)
            batch_loss += float(loss.data)
        mean_loss = batch_loss / total_chars
        if not math.isfinite(mean_loss):
            ids = ",".join(u.id for u in batch)
            raise TrainingError(f"update {update}: non-finite loss on batch [{ids}]")
        grad_norm = clip_gradients(params, cfg.clip)
        adam.step()
        history.append((update, mean_loss, grad_norm))

        if update % cfg.eval_interval == 0 and (
                cfg.early_stop_acc is not None or cfg.early_stop_cer is not None):
            acc = teacher_forced_accuracy(model, eval_data)
            acc_ok = cfg.early_stop_acc is None or acc >= cfg.early_stop_acc
            run_cer = None
            cer_ok = cfg.early_stop_cer is None
            if acc_ok and cfg.early_stop_cer is not None:
                hyps = [greedy_decode(model, u) for u in eval_data]
                run_cer = corpus_cer([u.transcript for u in eval_data], hyps)
                cer_ok = run_cer <= cfg.early_stop_cer
            evals.append((update, acc, run_cer))
            if acc_ok and cer_ok:
                stopped = True
                break

    if log_path is not None:
        write_train_log(log_path, history)
    return TrainResult(history=history, evals=evals, final_update=update,
                       stopped_early=stopped)


def write_train_log(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("update,loss,grad_norm\n")
        for update, loss, norm in history:
            fh.write(f"{update},{loss!r},{norm!r}\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"ARSG"
_VERSION = 1


def _tensor_table(model: Model, adam: Adam | None) -> dict[str, np.ndarray]:
    table = {name: p.data for name, p in model.parameters().items()}
    if adam is not None:
        for name, arr in adam.m.items():
            table["adam.m." + name] = arr
        for name, arr in adam.v.items():
            table["adam.v." + name] = arr
    return table


def save_checkpoint(path, model: Model, train_cfg: TrainConfig, update: int,
                    rng_state: dict | None = None, adam: Adam | None = None):
    table = _tensor_table(model, adam)
    blob = json.dumps({
        "model_config": dataclasses.asdict(model.config),
        "train_config": dataclasses.asdict(train_cfg),
        "update": update,
        "rng_state": rng_state,
        "adam_t": adam.t if adam is not None else 0,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(table)))
        for name in sorted(table):
            arr = table[name]
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


@dataclass
class LoadedCheckpoint:
    model: Model
    train_config: TrainConfig
    update: int
    rng_state: dict | None
    adam_moments: dict
    adam_t: int

    def make_adam(self) -> Adam:
        cfg = self.train_config
        adam = Adam(self.model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        adam.t = self.adam_t
        for name in adam.m:
            if "adam.m." + name in self.adam_moments:
                adam.m[name] = self.adam_moments["adam.m." + name]
                adam.v[name] = self.adam_moments["adam.v." + name]
        return adam

    def make_rng(self) -> np.random.Generator:
        rng = np.random.default_rng()
        if self.rng_state is not None:
            rng.bit_generator.state = self.rng_state
        return rng


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise IntegrityError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> LoadedCheckpoint:
    from .config import dataclass_from_dict

    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise FormatError(f"{path}: bad magic (not a checkpoint)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        table = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            n = int(np.prod(dims)) if rank else 1
            raw = _read_exact(fh, 4 * n, f"tensor {name}")
            table[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
        meta = json.loads(_read_exact(fh, blob_len, "metadata").decode("utf-8"))

    model_cfg = dataclass_from_dict(ModelConfig, meta["model_config"], "checkpoint model config")
    train_cfg = dataclass_from_dict(TrainConfig, meta["train_config"], "checkpoint train config")
    model = Model.build(model_cfg, seed=0)
    params = model.parameters()
    missing = set(params) - set(table)
    if missing:
        raise IntegrityError(f"checkpoint is missing tensors: {sorted(missing)[:5]}")
    for name, p in params.items():
        if table[name].shape != p.data.shape:
            raise IntegrityError(
                f"checkpoint tensor {name} has shape {table[name].shape}, "
                f"model expects {p.data.shape}")
        p.data = table[name]
    moments = {name: arr for name, arr in table.items() if name.startswith("adam.")}
    return LoadedCheckpoint(model=model, train_config=train_cfg,
                            update=int(meta["update"]), rng_state=meta["rng_state"],
                            adam_moments=moments, adam_t=int(meta["adam_t"]))

"""Run configuration: one JSON document driving the whole pipeline.

Sections mirror the component configs (synthesis, model dims, training,
decoding).  Unknown keys anywhere are rejected.  The model section
inherits vocab/channels/feat_dim from the synth section when omitted, so
the two cannot silently disagree.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .data import SynthConfig
from .errors import ConfigError, ParseError
from .model import ModelConfig
from .training import TrainConfig


def dataclass_from_dict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = fields[name].default
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


@dataclass
class DecodeConfig:
    beam: int = 8
    beta: float = 0.3
    gamma: float = 0.0
    half_width: int | None = 25
    max_len: int | None = None

    def validate(self):
        if self.beam < 1:
            raise ConfigError(f"decode.beam must be >= 1, got {self.beam}")
        if self.beta < 0:
            raise ConfigError(f"decode.beta must be >= 0, got {self.beta}")
        if self.half_width is not None and self.half_width < 1:
            raise ConfigError("decode.half_width must be >= 1 (or null for full attention)")


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(d) - {"synth", "model", "train", "decode"}
        if unknown:
            raise ConfigError(f"run config: unknown section(s) {sorted(unknown)}")
        synth = dataclass_from_dict(SynthConfig, d.get("synth", {}), "synth")
        model_dict = dict(d.get("model", {}))
        for key, value in (("vocab", synth.vocab), ("channels", synth.channels),
                           ("feat_dim", synth.feat_dim)):
            model_dict.setdefault(key, value)
        model = dataclass_from_dict(ModelConfig, model_dict, "model")
        cfg = cls(
            synth=synth,
            model=model,
            train=dataclass_from_dict(TrainConfig, d.get("train", {}), "train"),
            decode=dataclass_from_dict(DecodeConfig, d.get("decode", {}), "decode"),
        )
        cfg.validate()
        return cfg

    def validate(self):
        self.synth.validate()
        self.model.validate()
        self.train.validate()
        self.decode.validate()
        if self.model.vocab != self.synth.vocab:
            raise ConfigError("model.vocab and synth.vocab disagree")
        if self.model.channels != self.synth.channels:
            raise ConfigError("model.channels and synth.channels disagree")
        if self.model.feat_dim != self.synth.feat_dim:
            raise ConfigError("model.feat_dim and synth.feat_dim disagree")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "synth": dataclasses.asdict(self.synth),
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "decode": dataclasses.asdict(self.decode),
        }

"""Composite run configuration: one JSON file covers every stage's knobs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugConfig
from .errors import FormatError, ValidationError
from .losses import DistillConfig
from .masking import MaskConfig
from .model import ModelConfig
from .views import ViewConfig


@dataclass
class TrainConfig:
    epochs: int = 150
    warmup_epochs: int = 20
    base_lr: float = 2.0e-4
    final_lr: float = 1.0e-6
    tau_start: float = 0.994
    tau_end: float = 1.0
    tau_ramp: str = "cosine"  # "cosine" | "linear"
    batch_size: int = 32
    weight_decay: float = 0.05
    grad_clip: float = 3.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1.0e-8
    seed: int = 0
    checkpoint_every: int = 0  # epochs between mid-run checkpoints; 0 = final only
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.epochs > 0 and not (0 <= self.warmup_epochs < self.epochs):
            raise ValidationError("need 0 <= warmup_epochs < epochs")
        if self.base_lr <= 0 or self.final_lr <= 0:
            raise ValidationError("learning rates must be > 0")
        if self.tau_ramp not in ("cosine", "linear"):
            raise ValidationError(f"unknown tau_ramp {self.tau_ramp!r}")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "distill": DistillConfig,
    "augment": AugConfig,
    "mask": MaskConfig,
    "views": ViewConfig,
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    augment: AugConfig = field(default_factory=AugConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    views: ViewConfig = field(default_factory=ViewConfig)

    @classmethod
    def tiny(cls) -> "RunConfig":
        return cls(model=ModelConfig.tiny())

    @classmethod
    def paper(cls) -> "RunConfig":
        return cls(model=ModelConfig.paper())

    @classmethod
    def profile(cls, name: str) -> "RunConfig":
        if name == "tiny":
            return cls.tiny()
        if name == "paper":
            return cls.paper()
        raise ValidationError(f"unknown profile {name!r}")

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            # JSON has no tuples; normalize for a canonical representation.
            out[name] = json.loads(json.dumps(section))
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        unknown = set(doc) - set(_SECTIONS) - {"profile"}
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        base = cls.profile(doc["profile"]) if "profile" in doc else cls()
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            merged = dataclasses.asdict(getattr(base, name))
            overrides = doc.get(name, {})
            field_names = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(overrides) - field_names
            if bad:
                raise ValidationError(f"unknown keys in [{name}]: {sorted(bad)}")
            merged.update(overrides)
            merged = _tuplify(section_cls, merged)
            kwargs[name] = section_cls(**merged)
        return cls(**kwargs)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _tuplify(section_cls, values: dict) -> dict:
    # Restore tuple-typed fields that JSON round-tripped as lists.
    for f in dataclasses.fields(section_cls):
        v = values.get(f.name)
        if isinstance(v, list):
            values[f.name] = tuple(tuple(e) if isinstance(e, list) else e for e in v)
    return values


def load_run_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(doc)


def save_run_config(cfg: RunConfig, path: str | Path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

"""Experiment specifications and their strict JSON loader.

Unknown keys are rejected at every level; missing keys take the defaults
documented on the dataclasses below.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .optim import Decay, OptimizerKind


@dataclass
class SyntheticDataset:
    kind: str = "synthetic"
    classes: int = 10
    dim: int = 32
    train_per_class: int = 1000
    test_per_class: int = 200
    separation: float = 3.0
    spread: float = 1.0


@dataclass
class IdxDataset:
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str
    kind: str = "idx"


@dataclass
class ModelSpec:
    hidden: list[int] = field(default_factory=lambda: [256, 128])
    batchnorm: bool = False


@dataclass
class OptimSpec:
    kind: str = "sgd_momentum"
    base_lr: float = 0.01
    # ignored (taken as 0) for kind "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0
    trust_coeff: float = 0.001
    warmup_epochs: float = 0.0
    warmup_init_lr: float = 0.001
    decay: str = "polynomial"
    power: float = 2.0
    trust_clip: typing.Optional[float] = None
    # multiply base_lr by batch_size / baseline_batch
    scale_lr: bool = False
    # parameter kinds (weight, bias, bn_scale, bn_shift) opted out of LARS / weight decay
    lars_exclude: list[str] = field(default_factory=list)
    weight_decay_exclude: list[str] = field(default_factory=list)


@dataclass
class ExperimentSpec:
    dataset: typing.Union[SyntheticDataset, IdxDataset] = field(default_factory=SyntheticDataset)
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: OptimSpec = field(default_factory=OptimSpec)
    batch_size: int = 32
    baseline_batch: int = 32
    # per-chunk size for gradient accumulation; None means one chunk per batch
    chunk_size: typing.Optional[int] = None
    epochs: int = 1
    seed: int = 0
    out_dir: typing.Optional[str] = None
    eval_subset: int = 2000
    divergence_factor: float = 1e4
    metrics_format: str = "csv"
    save_checkpoint: bool = True

    @property
    def chunk(self) -> int:
        return self.chunk_size or self.batch_size

    @property
    def accum_factor(self) -> int:
        return self.batch_size // self.chunk

    def validate(self) -> "ExperimentSpec":
        def bad(fieldname, msg):
            raise ConfigError(f"{fieldname}: {msg}")

        if self.batch_size < 1:
            bad("batch_size", "must be >= 1")
        if self.baseline_batch < 1:
            bad("baseline_batch", "must be >= 1")
        if self.chunk_size is not None and self.chunk_size < 1:
            bad("chunk_size", "must be >= 1")
        if self.batch_size % self.chunk:
            bad("chunk_size", f"batch_size {self.batch_size} is not divisible by chunk_size {self.chunk}")
        if self.epochs < 1:
            bad("epochs", "must be >= 1")
        if not 0 <= self.seed < 2**64:
            bad("seed", "must be a 64-bit unsigned integer")
        if self.eval_subset < 1:
            bad("eval_subset", "must be >= 1")
        if not self.divergence_factor > 1:
            bad("divergence_factor", "must be > 1")
        if self.metrics_format not in ("csv", "jsonl"):
            bad("metrics_format", "must be 'csv' or 'jsonl'")
        if any(h < 1 for h in self.model.hidden):
            bad("model.hidden", "widths must be >= 1")
        o = self.optimizer
        try:
            OptimizerKind(o.kind)
        except ValueError:
            bad("optimizer.kind", f"unknown kind {o.kind!r}; expected one of {[k.value for k in OptimizerKind]}")
        try:
            Decay(o.decay)
        except ValueError:
            bad("optimizer.decay", f"unknown decay {o.decay!r}")
        if not o.base_lr > 0:
            bad("optimizer.base_lr", "must be > 0")
        if not 0 <= o.momentum < 1:
            bad("optimizer.momentum", "must lie in [0, 1)")
        if o.weight_decay < 0:
            bad("optimizer.weight_decay", "must be >= 0")
        if not o.trust_coeff > 0:
            bad("optimizer.trust_coeff", "must be > 0")
        if o.warmup_epochs < 0:
            bad("optimizer.warmup_epochs", "must be >= 0")
        if o.warmup_epochs >= self.epochs:
            bad("optimizer.warmup_epochs", "must be shorter than the run")
        if not o.warmup_init_lr > 0:
            bad("optimizer.warmup_init_lr", "must be > 0")
        if not o.power > 0:
            bad("optimizer.power", "must be > 0")
        if o.trust_clip is not None and not o.trust_clip > 0:
            bad("optimizer.trust_clip", "must be > 0")
        kinds = {"weight", "bias", "bn_scale", "bn_shift"}
        for name in ("lars_exclude", "weight_decay_exclude"):
            unknown = set(getattr(o, name)) - kinds
            if unknown:
                bad(f"optimizer.{name}", f"unknown parameter kinds {sorted(unknown)}")
        if isinstance(self.dataset, SyntheticDataset):
            d = self.dataset
            if d.classes < 2:
                bad("dataset.classes", "must be >= 2")
            if d.dim < 1 or d.train_per_class < 1 or d.test_per_class < 1:
                bad("dataset", "dim and per-class counts must be >= 1")
            if d.separation < 0 or d.spread < 0:
                bad("dataset", "separation and spread must be >= 0")
        return self


# --- strict (de)serialization ----------------------------------------------

def _convert(tp, value, where):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        choices = [a for a in args if a is not type(None)]
        if all(dataclasses.is_dataclass(a) for a in choices):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            kind = value.get("kind")
            for a in choices:
                if kind == a.__dataclass_fields__["kind"].default:
                    return _from_dict(a, value, where)
            known = [a.__dataclass_fields__["kind"].default for a in choices]
            raise ConfigError(f"{where}.kind: expected one of {known}, got {kind!r}")
        return _convert(choices[0], value, where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return _from_dict(tp, value, where)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return [_convert(args[0], v, f"{where}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    raise TypeError(f"unsupported field type {tp}")


def _from_dict(cls, d: dict, where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in d:
            kwargs[f.name] = _convert(hints[f.name], d[f.name], f"{where}.{f.name}" if where else f.name)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"{where or 'config'}: missing required key {f.name!r}")
    return cls(**kwargs)


def spec_from_dict(d: dict) -> ExperimentSpec:
    if not isinstance(d, dict):
        raise ConfigError("config: top level must be an object")
    return _from_dict(ExperimentSpec, d, "").validate()


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return dataclasses.asdict(spec)


def load_config(path) -> ExperimentSpec:
    """Parse and validate a JSON experiment config."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return spec_from_dict(raw)


def dump_config(spec: ExperimentSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")

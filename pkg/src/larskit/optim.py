"""SGD, momentum SGD and LARS over :class:`~larskit.nn.ParamGroup` lists.

The LARS step per group ``l`` at step ``t``::

    local_lr = eta * ||w|| / (||g|| + beta * ||w||)
    v <- m * v + global_lr(t) * local_lr * (g + beta * w)
    w <- w - v

Setting ``trust_coeff=1`` recovers the local-LR line without the trust factor.
When ``||w|| == 0`` or the denominator vanishes the local LR falls back to 1.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nd
from .errors import DivergenceError, FormatError, InvalidArgument
from .nn import Batch, MLP, ParamGroup, model_forward_backward


class OptimizerKind(str, Enum):
    SGD = "sgd"
    SGD_MOMENTUM = "sgd_momentum"
    LARS = "lars"


class Decay(str, Enum):
    CONSTANT = "constant"
    POLYNOMIAL = "polynomial"


@dataclass
class ScheduleSpec:
    warmup_steps: int = 0
    warmup_init_lr: float = 0.001
    decay: Decay = Decay.POLYNOMIAL
    power: float = 2.0

    def __post_init__(self):
        self.decay = Decay(self.decay)


@dataclass
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.SGD
    base_lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    trust_coeff: float = 0.001
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    total_steps: int = 1
    accum_factor: int = 1
    trust_clip: float = math.inf

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)
        if isinstance(self.schedule, dict):
            self.schedule = ScheduleSpec(**self.schedule)
        self.validate()

    def validate(self):
        s = self.schedule
        checks = [
            (self.base_lr > 0, "base_lr must be > 0"),
            (0 <= self.momentum < 1, "momentum must lie in [0, 1)"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (self.trust_coeff > 0, "trust_coeff must be > 0"),
            (self.total_steps >= 1, "total_steps must be >= 1"),
            (self.accum_factor >= 1, "accum_factor must be >= 1"),
            (self.trust_clip > 0, "trust_clip must be > 0"),
            (0 <= s.warmup_steps < self.total_steps, "warmup_steps must lie in [0, total_steps)"),
            (s.warmup_init_lr > 0, "warmup_init_lr must be > 0"),
            (s.warmup_steps == 0 or s.warmup_init_lr <= self.base_lr, "warmup_init_lr must not exceed base_lr"),
            (s.power > 0, "power must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidArgument(msg)
        if self.kind is OptimizerKind.SGD and self.momentum != 0:
            raise InvalidArgument("kind 'sgd' takes momentum 0; use 'sgd_momentum'")


@dataclass
class GroupRecord:
    name: str
    w_norm: float
    g_norm: float
    trust_ratio: float | None
    local_lr: float
    update_norm: float


@dataclass
class StepReport:
    step: int
    global_lr: float
    groups: list[GroupRecord]

    def by_name(self):
        return {r.name: r for r in self.groups}


def global_lr(cfg: OptimizerConfig, t: int) -> float:
    """Learning rate at step ``t``: linear warm-up, then polynomial decay to 0 at ``total_steps``.

    ``t == total_steps`` is accepted and returns the schedule's terminal value.
    """
    T = cfg.total_steps
    s = cfg.schedule
    W = s.warmup_steps
    if not 0 <= t <= T:
        raise InvalidArgument(f"step {t} outside [0, {T}]")
    if t < W:
        return s.warmup_init_lr + (cfg.base_lr - s.warmup_init_lr) * (t / W)
    if s.decay is Decay.CONSTANT:
        return cfg.base_lr
    return cfg.base_lr * (1.0 - (t - W) / (T - W)) ** s.power


def linear_scaled_lr(base_lr: float, base_batch: int, new_batch: int) -> float:
    """Scale ``base_lr`` by ``new_batch / base_batch``."""
    if base_batch <= 0 or new_batch <= 0:
        raise InvalidArgument(f"batch sizes must be positive, got {base_batch} and {new_batch}")
    return base_lr * new_batch / base_batch


def trust_ratio(w_norm: float, g_norm: float, beta: float) -> float | None:
    """``||w|| / (||g|| + beta ||w||)``, or None where it is undefined or zero."""
    denom = g_norm + beta * w_norm
    if w_norm == 0.0 or denom == 0.0:
        return None
    return w_norm / denom


def local_lr(w_norm: float, g_norm: float, eta: float, beta: float, clip: float = math.inf) -> float:
    """Per-group learning-rate multiplier with the fallback of 1.0 at degenerate norms."""
    if w_norm < 0 or g_norm < 0 or beta < 0 or not eta > 0:
        raise InvalidArgument(
            f"local_lr needs non-negative norms, eta > 0, beta >= 0 "
            f"(got w={w_norm}, g={g_norm}, eta={eta}, beta={beta})"
        )
    r = trust_ratio(w_norm, g_norm, beta)
    if r is None:
        return 1.0
    return min(eta * r, clip)


def _norms(g: ParamGroup, t: int):
    w_norm = nd.l2_norm(g.value)
    g_norm = nd.l2_norm(g.grad)
    if not (math.isfinite(w_norm) and math.isfinite(g_norm)):
        raise DivergenceError(f"non-finite norm in group {g.name} at step {t}", group=g.name, step=t)
    return w_norm, g_norm


def _apply(g: ParamGroup, lr: float, m: float, beta: float, t: int) -> float:
    # v <- m v + lr (g + beta w);  w <- w - v
    d = g.grad + beta * g.value
    v = m * g.momentum_buf + lr * d
    if not nd.all_finite(v):
        raise DivergenceError(f"non-finite update in group {g.name} at step {t}", group=g.name, step=t)
    g.momentum_buf = v
    g.value = g.value - v
    return nd.l2_norm(v)


def _step(groups: Sequence[ParamGroup], cfg: OptimizerConfig, t: int, layerwise: bool) -> StepReport:
    gamma = global_lr(cfg, t)
    records = []
    for g in groups:
        w_norm, g_norm = _norms(g, t)
        beta = cfg.weight_decay if g.apply_weight_decay else 0.0
        ratio = trust_ratio(w_norm, g_norm, beta)
        lam = local_lr(w_norm, g_norm, cfg.trust_coeff, beta, cfg.trust_clip) if (layerwise and g.apply_lars) else 1.0
        upd = _apply(g, gamma * lam, cfg.momentum, beta, t)
        records.append(GroupRecord(g.name, w_norm, g_norm, ratio, lam, upd))
    return StepReport(t, gamma, records)


def lars_step(groups: Sequence[ParamGroup], cfg: OptimizerConfig, t: int) -> StepReport:
    """One LARS update of every group at step ``t``; groups with ``apply_lars`` off use local LR 1."""
    return _step(groups, cfg, t, layerwise=True)


def sgd_step(groups: Sequence[ParamGroup], cfg: OptimizerConfig, t: int) -> StepReport:
    """Plain or momentum SGD with coupled (L2) weight decay."""
    return _step(groups, cfg, t, layerwise=False)


def step(groups: Sequence[ParamGroup], cfg: OptimizerConfig, t: int) -> StepReport:
    if cfg.kind is OptimizerKind.LARS:
        return lars_step(groups, cfg, t)
    return sgd_step(groups, cfg, t)


def accumulate_gradients(model: MLP, chunks: Sequence[Batch], update_stats=True):
    """Set every group's grad to the mean gradient over all samples of ``chunks``.

    Chunks must be equally sized; their gradients are summed in ascending
    chunk order and divided by the chunk count. Returns the mean
    ``(loss, accuracy)`` over the chunks.
    """
    if not chunks:
        raise InvalidArgument("accumulate_gradients needs at least one chunk")
    sizes = {len(c) for c in chunks}
    if len(sizes) != 1:
        raise InvalidArgument(f"chunks must have equal sizes, got {sorted(sizes)}")
    if len(chunks) == 1:
        return model_forward_backward(model, chunks[0], update_stats)
    sums = [np.zeros_like(g.value) for g in model.groups]
    loss_sum = acc_sum = 0.0
    for chunk in chunks:
        loss, acc = model_forward_backward(model, chunk, update_stats)
        loss_sum += loss
        acc_sum += acc
        for s, g in zip(sums, model.groups):
            s += g.grad
    k = len(chunks)
    for s, g in zip(sums, model.groups):
        g.grad = s / k
    return loss_sum / k, acc_sum / k


def linear_scaling_equivalence_check(w0, g_const, lr: float, batch: int):
    """Compare two steps at ``(batch, lr)`` with one step at ``(2 batch, 2 lr)``.

    ``g_const`` is either a constant per-sample gradient array or a callable
    ``sample_grad(w, i)`` giving sample ``i``'s gradient at ``w``. Samples
    ``0..batch-1`` form the first small batch, ``batch..2 batch-1`` the second;
    the big batch holds all of them. Returns ``(w_two_small_steps, w_one_big_step)``.
    """
    if batch < 1:
        raise InvalidArgument(f"batch must be positive, got {batch}")
    w0 = nd.tensor(w0)
    if callable(g_const):
        sample_grad: Callable = g_const
    else:
        const = nd.tensor(g_const)
        sample_grad = lambda w, i: const  # noqa: E731

    def mean_grad(w, idx):
        acc = np.zeros_like(w)
        for i in idx:
            acc += sample_grad(w, i)
        return acc / len(idx)

    w1 = w0 - lr * mean_grad(w0, range(batch))
    w2 = w1 - lr * mean_grad(w1, range(batch, 2 * batch))
    w_big = w0 - (2 * lr) * mean_grad(w0, range(2 * batch))
    return w2, w_big


# --- optimizer state persistence -------------------------------------------

STATE_FORMAT = "larskit-optimizer-state"
STATE_VERSION = 1


def config_to_dict(cfg: OptimizerConfig) -> dict:
    d = asdict(cfg)
    d["kind"] = cfg.kind.value
    d["schedule"]["decay"] = cfg.schedule.decay.value
    if math.isinf(cfg.trust_clip):
        d["trust_clip"] = None
    return d


def config_from_dict(d: dict) -> OptimizerConfig:
    d = dict(d)
    if d.get("trust_clip") is None:
        d["trust_clip"] = math.inf
    return OptimizerConfig(**d)


def save_state(path, groups: Sequence[ParamGroup], cfg: OptimizerConfig, step_count: int) -> Path:
    """Write momentum buffers and the step counter as JSON."""
    doc = {
        "format": STATE_FORMAT,
        "version": STATE_VERSION,
        "step": int(step_count),
        "config": config_to_dict(cfg),
        "momentum": {
            g.name: {"shape": list(g.momentum_buf.shape), "data": g.momentum_buf.reshape(-1).tolist()}
            for g in groups
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    return path


def load_state(path, groups: Sequence[ParamGroup]):
    """Restore momentum buffers into ``groups``; returns ``(config, step)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != STATE_FORMAT or doc.get("version") != STATE_VERSION:
        raise FormatError(f"{path}: not a version-{STATE_VERSION} {STATE_FORMAT} file")
    for g in groups:
        rec = doc["momentum"].get(g.name)
        if rec is None:
            raise FormatError(f"{path}: no momentum buffer for {g.name}")
        buf = nd.tensor(rec["data"], rec["shape"])
        if buf.shape != g.value.shape:
            raise FormatError(f"{path}: {g.name} momentum has shape {buf.shape}, expected {g.value.shape}")
        g.momentum_buf = buf
    return config_from_dict(doc["config"]), doc["step"]

"""Central finite-difference oracle for analytic gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument, OracleError
from .nn import Batch, MLP, ParamKind, model_forward_backward

DEFAULT_STEP = 1e-5
DEFAULT_THRESHOLDS = {
    ParamKind.WEIGHT: 1e-5,
    ParamKind.BIAS: 1e-5,
    ParamKind.BN_SCALE: 1e-4,
    ParamKind.BN_SHIFT: 1e-4,
}
REL_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    group: str
    max_relative_error: float
    worst_index: tuple | None
    threshold: float
    checked: int
    skipped: int

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.threshold

    def as_dict(self):
        return {
            "group": self.group,
            "max_relative_error": self.max_relative_error,
            "worst_index": list(self.worst_index) if self.worst_index is not None else None,
            "threshold": self.threshold,
            "checked": self.checked,
            "skipped": self.skipped,
            "pass": self.passed,
        }


def relative_error(a, n):
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


def _eval(loss_fn):
    v = float(loss_fn())
    if not math.isfinite(v):
        raise OracleError(f"loss is not finite ({v})")
    return v


def finite_diff_grad(loss_fn: Callable[[], float], params: np.ndarray, h: float = DEFAULT_STEP,
                     skip: Callable[[], bool] | None = None) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` with respect to ``params``.

    ``params`` is perturbed in place one coordinate at a time and each
    coordinate is restored to its exact original value. ``loss_fn`` takes no
    arguments and must read ``params`` through closure. If ``skip`` is given
    it is called after each loss evaluation; returning True marks the
    coordinate as unusable and its entry becomes NaN.
    """
    if not h > 0:
        raise InvalidArgument(f"step h must be positive, got {h}")
    grad = np.zeros(params.shape)
    flat = params.reshape(-1)
    if not np.shares_memory(flat, params):
        raise InvalidArgument("params must be a contiguous array perturbable in place")
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        try:
            flat[i] = orig + h
            fp = _eval(loss_fn)
            bad = skip is not None and skip()
            flat[i] = orig - h
            fm = _eval(loss_fn)
            bad = bad or (skip is not None and skip())
        finally:
            flat[i] = orig
        out[i] = np.nan if bad else (fp - fm) / (2.0 * h)
    return grad


def check_model(model: MLP, batch: Batch, thresholds=None, h: float = DEFAULT_STEP):
    """Compare analytic and numeric gradients for every parameter group.

    Coordinates whose perturbation flips any ReLU's active set are skipped
    (the loss has a kink there). Parameters and batch-norm running statistics
    are left bitwise unchanged. Returns one :class:`GradCheckReport` per group.
    """
    thr = dict(DEFAULT_THRESHOLDS)
    if thresholds:
        thr.update({ParamKind(k): v for k, v in thresholds.items()})
    saved_grads = [g.grad.copy() for g in model.groups]
    model_forward_backward(model, batch, update_stats=False)
    analytic = {g.name: g.grad.copy() for g in model.groups}
    for g, s in zip(model.groups, saved_grads):
        g.grad[...] = s
    model.forward(batch.inputs, update_stats=False)
    base_masks = model.relu_masks()

    def loss_fn():
        return model.loss(batch, update_stats=False)

    def kinked():
        return any((m != b).any() for m, b in zip(model.relu_masks(), base_masks))

    reports = []
    for g in model.groups:
        numeric = finite_diff_grad(loss_fn, g.value, h, skip=kinked)
        a = analytic[g.name]
        usable = ~np.isnan(numeric)
        err = np.where(usable, relative_error(a, np.where(usable, numeric, 0.0)), 0.0)
        if usable.any():
            flat_idx = int(np.argmax(np.where(usable, err, -1.0)))
            worst = float(err.reshape(-1)[flat_idx])
            where = tuple(int(i) for i in np.unravel_index(flat_idx, err.shape))
        else:
            worst, where = 0.0, None
        reports.append(GradCheckReport(g.name, worst, where, thr[g.kind],
                                       int(usable.sum()), int((~usable).sum())))
    return reports

"""End-to-end training runs and one-axis sweeps."""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import data, diagnostics, nd, optim
from .config import ExperimentSpec, IdxDataset, SyntheticDataset
from .errors import ConfigError, DivergenceError
from .nn import MLP, Batch, ParamKind, save_checkpoint

log = logging.getLogger(__name__)

OUT_ENV = "LARSKIT_OUT"
DEFAULT_OUT = "runs"

# stream ids for Rng.spawn
_DATA, _INIT, _SHUFFLE = 1, 2, 3


@dataclass
class RunResult:
    diverged: bool
    steps: int
    final_train_loss: float | None = None
    final_test_loss: float | None = None
    final_train_acc: float | None = None
    final_test_acc: float | None = None
    base_lr: float | None = None
    wall_seconds: float = 0.0
    divergence: str | None = None
    files: dict = field(default_factory=dict)


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def load_datasets(spec: ExperimentSpec, rng: nd.Rng):
    ds = spec.dataset
    if isinstance(ds, SyntheticDataset):
        params = data.BlobParams(ds.classes, ds.dim, ds.train_per_class, ds.test_per_class,
                                 ds.separation, ds.spread)
        return data.make_synthetic(params, rng.spawn(_DATA))
    if isinstance(ds, IdxDataset):
        return (data.load_idx(ds.train_images, ds.train_labels),
                data.load_idx(ds.test_images, ds.test_labels))
    raise ConfigError(f"dataset: unsupported {type(ds).__name__}")


def build_model(spec: ExperimentSpec, n_in: int, n_classes: int, rng: nd.Rng) -> MLP:
    widths = [n_in, *spec.model.hidden, n_classes]
    model = MLP(widths, spec.model.batchnorm, rng.spawn(_INIT))
    lars_off = {ParamKind(k) for k in spec.optimizer.lars_exclude}
    wd_off = {ParamKind(k) for k in spec.optimizer.weight_decay_exclude}
    for g in model.groups:
        g.apply_lars = g.kind not in lars_off
        g.apply_weight_decay = g.kind not in wd_off
    return model


def effective_base_lr(spec: ExperimentSpec) -> float:
    o = spec.optimizer
    if o.scale_lr:
        return optim.linear_scaled_lr(o.base_lr, spec.baseline_batch, spec.batch_size)
    return o.base_lr


def optimizer_config(spec: ExperimentSpec, steps_per_epoch: int) -> optim.OptimizerConfig:
    o = spec.optimizer
    total = spec.epochs * steps_per_epoch
    warmup = 0
    if o.warmup_epochs > 0:
        warmup = min(max(1, round(o.warmup_epochs * steps_per_epoch)), total - 1)
    base_lr = effective_base_lr(spec)
    return optim.OptimizerConfig(
        kind=o.kind,
        base_lr=base_lr,
        momentum=0.0 if o.kind == "sgd" else o.momentum,
        weight_decay=o.weight_decay,
        trust_coeff=o.trust_coeff,
        schedule=optim.ScheduleSpec(warmup, min(o.warmup_init_lr, base_lr), o.decay, o.power),
        total_steps=total,
        accum_factor=spec.accum_factor,
        trust_clip=math.inf if o.trust_clip is None else o.trust_clip,
    )


def run_experiment(spec: ExperimentSpec, out_dir=None) -> RunResult:
    """Train once according to ``spec``, writing metrics under ``out_dir``.

    Per step: accumulate chunk gradients, capture norms (every step for the
    first 50, then once per epoch), take an optimizer step. Per epoch: record
    the train/test loss gap. A non-finite loss, a loss above
    ``divergence_factor`` times the first loss, or a non-finite update ends
    the run early with ``diverged=True``.
    """
    spec.validate()
    t0 = time.perf_counter()
    out = Path(out_dir or spec.out_dir or default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    rng = nd.Rng(spec.seed)
    train, test = load_datasets(spec, rng)
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    model = build_model(spec, train.inputs.shape[1], n_classes, rng)
    steps_per_epoch = len(train) // spec.batch_size
    if steps_per_epoch < 1:
        raise ConfigError(f"batch_size: {spec.batch_size} exceeds the {len(train)} training samples")
    cfg = optimizer_config(spec, steps_per_epoch)
    k = spec.accum_factor
    train_eval = data.subset(train, spec.eval_subset)
    shuffle = rng.spawn(_SHUFFLE)

    ext = spec.metrics_format
    paths = {
        "steps": out / f"steps.{ext}",
        "norms": out / f"norms.{ext}",
        "loss_gap": out / f"loss_gap.{ext}",
    }
    for p in paths.values():
        if p.exists():
            p.unlink()
    steps_sink = diagnostics.MetricsSink(paths["steps"], diagnostics.STEP_HEADER, ext)
    norms_sink = diagnostics.MetricsSink(paths["norms"], diagnostics.NORM_HEADER, ext)
    gap_sink = diagnostics.MetricsSink(paths["loss_gap"], diagnostics.LOSS_GAP_HEADER, ext)
    sinks = (steps_sink, norms_sink, gap_sink)

    result = RunResult(diverged=False, steps=0, base_lr=cfg.base_lr)
    first_loss = None
    t = 0
    try:
        for epoch in range(spec.epochs):
            order = shuffle.permutation(len(train))
            for s in range(steps_per_epoch):
                idx = order[s * spec.batch_size:(s + 1) * spec.batch_size]
                batch = Batch(train.inputs[idx], train.labels[idx])
                loss, acc = optim.accumulate_gradients(model, batch.split(k))
                if first_loss is None:
                    first_loss = loss
                if not math.isfinite(loss) or loss > spec.divergence_factor * first_loss:
                    raise DivergenceError(f"loss {loss!r} at step {t}", step=t)
                if diagnostics.should_capture(t, steps_per_epoch):
                    norms_sink.emit(diagnostics.capture_norms(model.groups, t, cfg))
                report = optim.step(model.groups, cfg, t)
                steps_sink.emit([diagnostics.StepRow(t, epoch, report.global_lr, loss, acc)])
                t += 1
            gap_sink.emit([diagnostics.capture_loss_gap(model, train_eval, test, epoch)])
            for sink in sinks:
                sink.flush()
    except DivergenceError as exc:
        log.warning("run diverged: %s", exc)
        result.diverged = True
        result.divergence = str(exc)
    finally:
        for sink in sinks:
            sink.flush()
    result.steps = t
    if not result.diverged:
        result.final_train_loss, result.final_train_acc = model.evaluate(train_eval)
        result.final_test_loss, result.final_test_acc = model.evaluate(test)
        if spec.save_checkpoint:
            paths["checkpoint"] = save_checkpoint(out / "checkpoint.json", model, step=t)
            paths["optimizer_state"] = optim.save_state(out / "optimizer_state.json", model.groups, cfg, t)
    result.files = {k: str(v) for k, v in paths.items()}
    result.wall_seconds = time.perf_counter() - t0
    (out / "result.json").write_text(json.dumps(asdict(result), indent=2) + "\n")
    return result


# --- sweeps ------------------------------------------------------------------

AXES = ("lr", "batch", "epochs")
SUMMARY_HEADER = ["batch", "lr", "epochs", "test_acc", "test_loss", "train_loss", "diverged", "best"]


def spec_for_point(base: ExperimentSpec, axis: str, value) -> ExperimentSpec:
    spec = copy.deepcopy(base)
    if axis == "lr":
        spec.optimizer.base_lr = float(value)
    elif axis == "batch":
        b = int(value)
        spec.batch_size = b
        if spec.chunk_size is not None:
            spec.chunk_size = min(spec.chunk_size, b)
    elif axis == "epochs":
        spec.epochs = int(value)
    else:
        raise ConfigError(f"axis: expected one of {AXES}, got {axis!r}")
    return spec.validate()


def run_sweep(base: ExperimentSpec, axis: str, values, out_dir=None):
    """One run per value along ``axis``; returns ``(results, summary_rows)``.

    Summary rows are sorted by the axis value; the best non-diverged test
    accuracy is flagged. ``summary.csv`` is written under ``out_dir``.
    """
    if axis not in AXES:
        raise ConfigError(f"axis: expected one of {AXES}, got {axis!r}")
    out = Path(out_dir or base.out_dir or default_out_dir())
    key = {"lr": float, "batch": int, "epochs": int}[axis]
    points = sorted((key(v) for v in values))
    results, rows = [], []
    for v in points:
        spec = spec_for_point(base, axis, v)
        res = run_experiment(spec, out / f"{axis}={v}")
        results.append(res)
        rows.append({
            "batch": spec.batch_size,
            "lr": res.base_lr,
            "epochs": spec.epochs,
            "test_acc": res.final_test_acc,
            "test_loss": res.final_test_loss,
            "train_loss": res.final_train_loss,
            "diverged": res.diverged,
            "best": False,
        })
    ok = [r for r in rows if not r["diverged"]]
    if ok:
        max(ok, key=lambda r: r["test_acc"])["best"] = True
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in SUMMARY_HEADER})
    return results, rows


def format_summary(rows) -> str:
    lines = [f"{'batch':>7} {'LR':>10} {'epochs':>6} {'test acc, %':>12}"]
    for r in rows:
        acc = "diverged" if r["diverged"] else f"{100 * r['test_acc']:.2f}"
        mark = " *" if r["best"] else ""
        lines.append(f"{r['batch']:>7} {r['lr']:>10.4g} {r['epochs']:>6} {acc:>12}{mark}")
    return "\n".join(lines)

"""Per-group norm ratios, loss-gap rows and CSV/JSONL metric sinks."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

from . import nd
from .errors import InvalidArgument, SinkError
from .nn import Batch, MLP, ParamGroup
from .optim import OptimizerConfig, OptimizerKind, local_lr


@dataclass
class NormRatioRow:
    step: int
    group: str
    w_norm: float
    g_norm: float
    ratio: float | None
    local_lr: float


@dataclass
class LossGapRow:
    epoch: int
    train_loss: float
    test_loss: float
    gap: float
    train_acc: float
    test_acc: float


@dataclass
class StepRow:
    step: int
    epoch: int
    global_lr: float
    loss: float
    accuracy: float


NORM_HEADER = [f.name for f in fields(NormRatioRow)]
LOSS_GAP_HEADER = [f.name for f in fields(LossGapRow)]
STEP_HEADER = [f.name for f in fields(StepRow)]


def capture_norms(groups: Sequence[ParamGroup], step: int, cfg: OptimizerConfig | None = None):
    """One :class:`NormRatioRow` per group; reads only.

    ``local_lr`` is the multiplier the optimizer in ``cfg`` would apply to the
    group at these norms (1.0 for non-LARS optimizers, groups with LARS
    disabled, or when no config is given).
    """
    rows = []
    for g in groups:
        w = nd.l2_norm(g.value)
        gn = nd.l2_norm(g.grad)
        ratio = None if gn == 0.0 else w / gn
        lam = 1.0
        if cfg is not None and cfg.kind is OptimizerKind.LARS and g.apply_lars:
            beta = cfg.weight_decay if g.apply_weight_decay else 0.0
            lam = local_lr(w, gn, cfg.trust_coeff, beta, cfg.trust_clip)
        rows.append(NormRatioRow(step, g.name, w, gn, ratio, lam))
    return rows


def capture_loss_gap(model: MLP, train_eval_set: Batch, test_set: Batch, epoch: int) -> LossGapRow:
    """Inference-mode losses/accuracies on fixed train and test evaluation sets."""
    if train_eval_set is None or test_set is None or len(train_eval_set) == 0 or len(test_set) == 0:
        raise InvalidArgument("loss-gap evaluation sets must be non-empty")
    tr_loss, tr_acc = model.evaluate(train_eval_set)
    te_loss, te_acc = model.evaluate(test_set)
    return LossGapRow(epoch, tr_loss, te_loss, te_loss - tr_loss, tr_acc, te_acc)


def should_capture(step: int, steps_per_epoch: int, dense_steps: int = 50) -> bool:
    """Every step for the first ``dense_steps`` steps, then at each epoch start."""
    return step < dense_steps or step % steps_per_epoch == 0


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsSink:
    """Append-only metric stream in CSV or JSONL.

    Rows are buffered and written on :meth:`flush` (the harness flushes at
    each epoch end). The CSV header is written once, when the file is new or
    empty. ``None`` becomes an empty CSV cell or JSON ``null``.
    """

    def __init__(self, path, header: Sequence[str], fmt: str | None = None):
        self.path = Path(path)
        self.header = list(header)
        self.format = fmt or ("jsonl" if self.path.suffix == ".jsonl" else "csv")
        if self.format not in ("csv", "jsonl"):
            raise InvalidArgument(f"unknown sink format {self.format!r}")
        self.buffer = []

    def emit(self, rows: Iterable) -> None:
        for r in rows:
            self.buffer.append(asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r))

    def flush(self) -> None:
        if not self.buffer:
            return
        out = io.StringIO()
        if self.format == "csv":
            w = csv.writer(out, lineterminator="\n")
            if not self.path.exists() or self.path.stat().st_size == 0:
                w.writerow(self.header)
            for r in self.buffer:
                w.writerow([_cell(r[k]) for k in self.header])
        else:
            for r in self.buffer:
                out.write(json.dumps({k: r[k] for k in self.header}) + "\n")
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(out.getvalue())
        except OSError as exc:
            raise SinkError(f"cannot write metrics to {self.path}: {exc}") from exc
        self.buffer.clear()

    def close(self):
        self.flush()


def emit(sink: MetricsSink, rows) -> None:
    """Append ``rows`` to ``sink`` and write them out."""
    sink.emit(rows)
    sink.flush()


def _parse_cell(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_metrics(path) -> list[dict]:
    """Parse a CSV or JSONL metrics file back into dicts."""
    path = Path(path)
    if path.suffix == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def ratio_spread(rows: Sequence[NormRatioRow], suffix=".w") -> float:
    """max/min of ``ratio`` over rows whose group name ends with ``suffix``."""
    vals = [r.ratio for r in rows if r.group.endswith(suffix) and r.ratio]
    if not vals:
        return math.nan
    return max(vals) / min(vals)

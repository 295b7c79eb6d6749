"""A small MLP zoo with hand-written backward passes.

Layers: dense (affine), ReLU, batch normalization, and softmax cross-entropy
as the loss. Every trainable tensor lives in its own :class:`ParamGroup`, so
weights and biases of one layer are separate units for layer-wise optimizers.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import nd
from .errors import FormatError, InvalidArgument, InvalidBatch, ShapeError, UsageError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ParamKind(str, Enum):
    WEIGHT = "weight"
    BIAS = "bias"
    BN_SCALE = "bn_scale"
    BN_SHIFT = "bn_shift"


@dataclass(eq=False)
class ParamGroup:
    """One named parameter tensor plus its gradient and momentum buffer."""

    name: str
    kind: ParamKind
    value: np.ndarray
    grad: np.ndarray = None
    momentum_buf: np.ndarray = None
    apply_weight_decay: bool = True
    apply_lars: bool = True

    def __post_init__(self):
        self.kind = ParamKind(self.kind)
        self.value = nd.tensor(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum_buf is None:
            self.momentum_buf = np.zeros_like(self.value)
        if not (self.value.shape == self.grad.shape == self.momentum_buf.shape):
            raise ShapeError(
                f"{self.name}: value/grad/momentum shapes differ "
                f"{self.value.shape} {self.grad.shape} {self.momentum_buf.shape}"
            )


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = nd.tensor(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ShapeError(f"batch inputs must be 2-D, got shape {self.inputs.shape}")
        if len(self.labels) != self.inputs.shape[0]:
            raise ShapeError(
                f"{self.inputs.shape[0]} inputs but {len(self.labels)} labels"
            )
        if len(self.labels) < 1:
            raise InvalidBatch("empty batch")

    def __len__(self):
        return len(self.labels)

    def split(self, n_chunks: int) -> list["Batch"]:
        """Split into ``n_chunks`` contiguous equal-size chunks."""
        if n_chunks < 1 or len(self) % n_chunks:
            raise InvalidArgument(f"cannot split a batch of {len(self)} into {n_chunks} equal chunks")
        size = len(self) // n_chunks
        return [
            Batch(self.inputs[i * size:(i + 1) * size], self.labels[i * size:(i + 1) * size])
            for i in range(n_chunks)
        ]


# --- layer math -----------------------------------------------------------

def dense_forward(x, W, b):
    """Affine map ``x @ W + b`` with the bias broadcast over rows."""
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"dense_forward: bad ranks x{x.shape} W{W.shape} b{b.shape}")
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"dense_forward: shapes do not conform x{x.shape} W{W.shape} b{b.shape}")
    return x @ W + b


def dense_backward(dy, x, W):
    """Return ``(dx, dW, db)`` for ``y = x @ W + b``."""
    if dy.ndim != 2 or dy.shape[0] != x.shape[0] or dy.shape[1] != W.shape[1] or x.shape[1] != W.shape[0]:
        raise ShapeError(f"dense_backward: shapes do not conform dy{dy.shape} x{x.shape} W{W.shape}")
    dW = x.T @ dy
    db = dy.sum(axis=0)
    dx = dy @ W.T
    return dx, dW, db


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    # subgradient at exactly 0 is 0
    if dy.shape != x.shape:
        raise ShapeError(f"relu_backward: shape mismatch {dy.shape} vs {x.shape}")
    return np.where(x > 0.0, dy, 0.0)


@dataclass
class BNRunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, n):
        return cls(np.zeros(n), np.ones(n))


def batchnorm_forward(x, gamma, beta, eps=BN_EPS, training=True, running=None,
                      momentum=BN_MOMENTUM):
    """Normalize each feature column, then scale by ``gamma`` and shift by ``beta``.

    In training mode the batch mean and population variance are used and,
    if ``running`` is given, its statistics are updated in place by an
    exponential moving average with weight ``momentum`` on the old value.
    In inference mode ``running`` supplies the statistics.

    Returns ``(y, cache)``; the cache feeds :func:`batchnorm_backward`.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm_forward: x{x.shape} gamma{gamma.shape} beta{beta.shape}")
    if training:
        if x.shape[0] < 2:
            raise InvalidBatch(f"batch norm in training mode needs B >= 2, got B={x.shape[0]}")
        mu = x.mean(axis=0)
        xc = x - mu
        var = (xc * xc).mean(axis=0)
        if running is not None:
            running.mean[...] = momentum * running.mean + (1.0 - momentum) * mu
            running.var[...] = momentum * running.var + (1.0 - momentum) * var
    else:
        if running is None:
            raise UsageError("batch norm inference mode needs running statistics")
        xc = x - running.mean
        var = running.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    y = gamma * xhat + beta
    return y, {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "training": training}


def batchnorm_backward(dy, cache):
    """Return ``(dx, dgamma, dbeta)``, including the batch-statistic terms in training mode."""
    if cache is None:
        raise UsageError("batchnorm_backward called without a forward cache")
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    if dy.shape != xhat.shape:
        raise ShapeError(f"batchnorm_backward: dy{dy.shape} vs cached {xhat.shape}")
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if not cache["training"]:
        return dxhat * inv_std, dgamma, dbeta
    B = dy.shape[0]
    dx = (inv_std / B) * (
        B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
    )
    return dx, dgamma, dbeta


def softmax_ce_loss(logits, labels):
    """Mean cross-entropy of ``softmax(logits)`` against integer labels.

    Returns ``(loss, dlogits)`` where ``dlogits`` is the gradient of the mean loss.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_ce_loss: logits{logits.shape} labels{labels.shape}")
    B, C = logits.shape
    if B == 0:
        raise InvalidBatch("empty batch")
    if labels.min() < 0 or labels.max() >= C:
        raise InvalidArgument(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    s = ez.sum(axis=1, keepdims=True)
    log_probs = z - np.log(s)
    rows = np.arange(B)
    loss = -float(np.mean(log_probs[rows, labels]))
    dlogits = ez / s
    dlogits[rows, labels] -= 1.0
    dlogits /= B
    return loss, dlogits


# --- layers ---------------------------------------------------------------

class Dense:
    def __init__(self, name, n_in, n_out, rng=None, bias=True):
        if rng is None:
            w = np.zeros((n_in, n_out))
        else:
            w = nd.gaussian(rng, (n_in, n_out), 0.0, 1.0 / math.sqrt(n_in))
        self.name = name
        self.w = ParamGroup(f"{name}.w", ParamKind.WEIGHT, w)
        self.b = ParamGroup(f"{name}.b", ParamKind.BIAS, np.zeros(n_out)) if bias else None
        self._x = None

    @property
    def groups(self):
        return [self.w] if self.b is None else [self.w, self.b]

    def forward(self, x, training=True, update_stats=True):
        self._x = x
        if self.b is None:
            if x.ndim != 2 or x.shape[1] != self.w.value.shape[0]:
                raise ShapeError(f"{self.name}: input {x.shape} vs weight {self.w.value.shape}")
            return x @ self.w.value
        return dense_forward(x, self.w.value, self.b.value)

    def backward(self, dy):
        if self._x is None:
            raise UsageError(f"{self.name}: backward before forward")
        dx, dW, db = dense_backward(dy, self._x, self.w.value)
        self.w.grad[...] = dW
        if self.b is not None:
            self.b.grad[...] = db
        return dx


class ReLU:
    groups = ()

    def __init__(self, name):
        self.name = name
        self.pre = None

    def forward(self, x, training=True, update_stats=True):
        self.pre = x
        return relu_forward(x)

    def backward(self, dy):
        if self.pre is None:
            raise UsageError(f"{self.name}: backward before forward")
        return relu_backward(dy, self.pre)


class BatchNorm:
    def __init__(self, name, n):
        self.name = name
        self.gamma = ParamGroup(f"{name}.gamma", ParamKind.BN_SCALE, np.ones(n))
        self.beta = ParamGroup(f"{name}.beta", ParamKind.BN_SHIFT, np.zeros(n))
        self.running = BNRunningStats.fresh(n)
        self.eps = BN_EPS
        self.momentum = BN_MOMENTUM
        self._cache = None

    @property
    def groups(self):
        return [self.gamma, self.beta]

    def forward(self, x, training=True, update_stats=True):
        y, self._cache = batchnorm_forward(
            x, self.gamma.value, self.beta.value, self.eps, training,
            self.running if (update_stats or not training) else None, self.momentum,
        )
        return y

    def backward(self, dy):
        dx, dgamma, dbeta = batchnorm_backward(dy, self._cache)
        self.gamma.grad[...] = dgamma
        self.beta.grad[...] = dbeta
        return dx


class MLP:
    """Dense -> [BatchNorm] -> ReLU stacks ending in a dense logits layer.

    A dense layer feeding batch norm carries no bias: the normalization
    cancels any per-feature shift, so such a bias would have an identically
    zero gradient. ``bn{k}.beta`` plays its role.
    """

    def __init__(self, widths, batchnorm=False, rng=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidArgument(f"need at least input and output widths, got {widths}")
        self.widths = widths
        self.batchnorm = bool(batchnorm)
        self.training = True
        self.layers = []
        n_dense = len(widths) - 1
        for i in range(n_dense):
            k = i + 1
            hidden = k < n_dense
            self.layers.append(Dense(f"dense{k}", widths[i], widths[i + 1], rng,
                                     bias=not (hidden and self.batchnorm)))
            if hidden:
                if self.batchnorm:
                    self.layers.append(BatchNorm(f"bn{k}", widths[i + 1]))
                self.layers.append(ReLU(f"relu{k}"))
        self.groups = [g for layer in self.layers for g in layer.groups]
        names = [g.name for g in self.groups]
        assert len(set(names)) == len(names)

    @property
    def num_classes(self):
        return self.widths[-1]

    def group(self, name) -> ParamGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def forward(self, x, training=None, update_stats=True):
        if training is None:
            training = self.training
        for layer in self.layers:
            x = layer.forward(x, training, update_stats)
        return x

    def backward(self, dlogits):
        dy = dlogits
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def loss(self, batch: Batch, training=None, update_stats=False) -> float:
        """Loss only; by default leaves batch-norm running statistics alone."""
        logits = self.forward(batch.inputs, training, update_stats)
        return softmax_ce_loss(logits, batch.labels)[0]

    def evaluate(self, batch: Batch):
        """Inference-mode ``(loss, accuracy)``."""
        logits = self.forward(batch.inputs, training=False, update_stats=False)
        loss, _ = softmax_ce_loss(logits, batch.labels)
        return loss, accuracy(logits, batch.labels)

    def relu_masks(self):
        return [layer.pre > 0.0 for layer in self.layers if isinstance(layer, ReLU)]

    def clone(self) -> "MLP":
        return copy.deepcopy(self)

    def running_stats(self):
        return {layer.name: layer.running for layer in self.layers if isinstance(layer, BatchNorm)}


def accuracy(logits, labels) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def model_forward_backward(model: MLP, batch: Batch, update_stats=True):
    """Forward and backward over ``batch``; grads land in every ParamGroup.

    Gradients are of the batch-mean loss. Parameter values are not touched.
    Returns ``(loss, accuracy)``.
    """
    logits = model.forward(batch.inputs, training=model.training, update_stats=update_stats)
    loss, dlogits = softmax_ce_loss(logits, batch.labels)
    model.backward(dlogits)
    return loss, accuracy(logits, batch.labels)


# --- checkpoints ----------------------------------------------------------

CHECKPOINT_FORMAT = "larskit-checkpoint"
CHECKPOINT_VERSION = 1


def _pack(a):
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def _unpack(d, where):
    try:
        return nd.tensor(d["data"], d["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: bad tensor record ({exc})") from None


def save_checkpoint(path, model: MLP, step: int | None = None, extra=None) -> Path:
    """Write model parameters, grads, momentum buffers and BN statistics as JSON."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": {"widths": model.widths, "batchnorm": model.batchnorm},
        "groups": [
            {
                "name": g.name,
                "kind": g.kind.value,
                "apply_weight_decay": g.apply_weight_decay,
                "apply_lars": g.apply_lars,
                "value": _pack(g.value),
                "grad": _pack(g.grad),
                "momentum": _pack(g.momentum_buf),
            }
            for g in model.groups
        ],
        "running_stats": {
            name: {"mean": _pack(s.mean), "var": _pack(s.var)}
            for name, s in model.running_stats().items()
        },
        "optimizer": {"step": step},
    }
    if extra:
        doc["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    return path


def load_checkpoint(path):
    """Return ``(model, optimizer_state)`` from a checkpoint written by :func:`save_checkpoint`."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not JSON (line {exc.lineno}: {exc.msg})") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {doc.get('version')}")
    model = MLP(doc["model"]["widths"], doc["model"]["batchnorm"])
    records = {r["name"]: r for r in doc["groups"]}
    if set(records) != {g.name for g in model.groups}:
        raise FormatError(f"{path}: parameter groups do not match the declared topology")
    for g in model.groups:
        r = records[g.name]
        for attr, key in (("value", "value"), ("grad", "grad"), ("momentum_buf", "momentum")):
            t = _unpack(r[key], f"{g.name}.{key}")
            if t.shape != g.value.shape:
                raise FormatError(f"{path}: {g.name}.{key} has shape {t.shape}, expected {g.value.shape}")
            setattr(g, attr, t)
        g.apply_weight_decay = bool(r["apply_weight_decay"])
        g.apply_lars = bool(r["apply_lars"])
    for name, stats in model.running_stats().items():
        r = doc["running_stats"][name]
        stats.mean = _unpack(r["mean"], f"{name}.running_mean")
        stats.var = _unpack(r["var"], f"{name}.running_var")
    return model, doc.get("optimizer", {})

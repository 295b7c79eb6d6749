"""Dense float64 tensor helpers and a seeded RNG.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. The helpers here add shape checking and pin the reduction order so
that norms and sums are reproducible bit for bit between runs.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgument, ShapeError

Tensor = np.ndarray

DTYPE = np.float64


def tensor(values, shape=None) -> Tensor:
    """Build a contiguous float64 tensor from nested lists or an array."""
    t = np.ascontiguousarray(values, dtype=DTYPE)
    if shape is not None:
        shape = tuple(shape)
        if int(np.prod(shape)) != t.size:
            raise ShapeError(f"cannot view {t.size} elements as shape {shape}")
        t = t.reshape(shape)
    return t


def zeros(shape) -> Tensor:
    return np.zeros(tuple(shape), dtype=DTYPE)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def sum_sq(t: Tensor) -> float:
    # np.add.reduce on a contiguous 1-D view uses a fixed pairwise tree, so the
    # result only depends on the values and their order.
    flat = np.ascontiguousarray(t, dtype=DTYPE).reshape(-1)
    return float(np.add.reduce(flat * flat))


def l2_norm(t: Tensor) -> float:
    """Euclidean norm over all elements of ``t``.

    Elements are scaled by the largest magnitude before squaring, so tiny or
    huge entries neither underflow nor overflow.
    """
    if t.size == 0:
        raise InvalidArgument("l2_norm of an empty tensor")
    big = float(np.max(np.abs(t)))
    if big == 0.0 or not np.isfinite(big):
        return big
    return big * float(np.sqrt(sum_sq(t / big)))


def axpy(alpha: float, x: Tensor, y: Tensor) -> Tensor:
    """Return ``y + alpha * x`` as a new tensor."""
    _check_same_shape(x, y, "axpy")
    return y + alpha * x


def scale(t: Tensor, c: float) -> Tensor:
    return t * c


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return a - b


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "hadamard")
    return a * b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    return a @ b


def transpose(t: Tensor) -> Tensor:
    if t.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {t.ndim}-D")
    return np.ascontiguousarray(t.T)


def reduce_mean(t: Tensor, axis=None):
    if t.size == 0:
        raise InvalidArgument("reduce_mean of an empty tensor")
    return np.mean(t, axis=axis)


def reduce_var(t: Tensor, axis=None):
    """Population variance (divides by N)."""
    if t.size == 0:
        raise InvalidArgument("reduce_var of an empty tensor")
    mu = np.mean(t, axis=axis, keepdims=True)
    d = t - mu
    return np.mean(d * d, axis=axis)


def all_finite(t: Tensor) -> bool:
    return bool(np.isfinite(t).all())


class Rng:
    """Seeded normal/uniform/permutation source.

    Backed by numpy's PCG64 bit generator, whose output stream is specified
    independently of platform, so equal seeds give equal draws everywhere.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidArgument(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def normal(self, shape) -> Tensor:
        return self._gen.standard_normal(tuple(shape), dtype=DTYPE)

    def uniform(self, shape, low=0.0, high=1.0) -> Tensor:
        return self._gen.uniform(low, high, tuple(shape))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent stream; deterministic in (seed, key)."""
        mixed = np.random.SeedSequence([self.seed, int(key)]).generate_state(2, np.uint64)
        return Rng(int(mixed[0]))


def gaussian(rng: Rng, shape, mean: float = 0.0, std: float = 1.0) -> Tensor:
    """I.i.d. normal draws with the given mean and standard deviation."""
    if std < 0:
        raise InvalidArgument(f"std must be non-negative, got {std}")
    z = rng.normal(shape)
    return mean + std * z

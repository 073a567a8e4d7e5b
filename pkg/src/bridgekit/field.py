"""Pixel fields, the seeded generator, and elementwise numerics.

Every image, uncertainty map and schedule coefficient in the package is a
:class:`PixelField`: an immutable ``(height, width, channels)`` float64 grid.
All arithmetic between fields is elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .docmap import implements
from .errors import DivisionFloorViolated, InvalidBounds, NonFiniteValue, ShapeMismatch

DIV_FLOOR = 1e-12

Shape = tuple[int, int, int]
Operand = Union["PixelField", float, int]


@dataclass(frozen=True, eq=False)
class PixelField:
    """Immutable H x W x C grid of float64 values in row-major order."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeMismatch(f"PixelField needs a non-empty 3-d array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("PixelField values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_values(cls, height: int, width: int, channels: int, values) -> PixelField:
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != height * width * channels:
            raise ShapeMismatch(f"{flat.size} values cannot fill {height}x{width}x{channels}")
        return cls(flat.reshape(height, width, channels))

    @classmethod
    def full(cls, shape: Shape, value: float) -> PixelField:
        return cls(np.full(shape, float(value)))

    @classmethod
    def zeros(cls, shape: Shape) -> PixelField:
        return cls(np.zeros(shape))

    @classmethod
    def vector(cls, values) -> PixelField:
        """A 1 x n x 1 field, handy for scalar batches and tests."""
        flat = np.asarray(values, dtype=np.float64).ravel()
        return cls(flat.reshape(1, flat.size, 1))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Shape:
        return self.data.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return self.data.size

    def values(self) -> np.ndarray:
        return self.data.ravel()

    def with_data(self, arr: np.ndarray) -> PixelField:
        return PixelField(np.asarray(arr, dtype=np.float64).reshape(self.shape))

    def allclose(self, other: PixelField, atol: float = 0.0, rtol: float = 0.0) -> bool:
        return self.shape == other.shape and bool(np.allclose(self.data, other.data, atol=atol, rtol=rtol))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PixelField):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"PixelField({self.height}x{self.width}x{self.channels})"

    def _binary(self, other: Operand, op: str, reflected: bool = False) -> PixelField:
        b = other if isinstance(other, PixelField) else PixelField.full(self.shape, other)
        return map2(b, self, op) if reflected else map2(self, b, op)

    def __add__(self, other: Operand) -> PixelField:
        return self._binary(other, "add")

    def __radd__(self, other: Operand) -> PixelField:
        return self._binary(other, "add", reflected=True)

    def __sub__(self, other: Operand) -> PixelField:
        return self._binary(other, "sub")

    def __rsub__(self, other: Operand) -> PixelField:
        return self._binary(other, "sub", reflected=True)

    def __mul__(self, other: Operand) -> PixelField:
        return self._binary(other, "mul")

    def __rmul__(self, other: Operand) -> PixelField:
        return self._binary(other, "mul", reflected=True)

    def __truediv__(self, other: Operand) -> PixelField:
        return self._binary(other, "div")

    def __neg__(self) -> PixelField:
        return PixelField(-self.data)


class RngState:
    """Seeded Gaussian/uniform source.

    Backed by numpy's Philox4x32-10 counter-based bit generator keyed by the
    seed, so a given seed yields the same stream on every platform. Not safe
    to share between concurrent tasks; use :meth:`child` to derive
    independent per-worker streams.
    """

    def __init__(self, seed: int) -> None:
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def child(self, index: int) -> RngState:
        """Independent stream for worker/image ``index`` (seed + index)."""
        return RngState((self.seed + int(index)) % 2**64)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n: int) -> int:
        return int(self._gen.integers(0, n))


_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "min": np.minimum,
    "max": np.maximum,
}


def _check_same_shape(a: PixelField, b: PixelField) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} does not match {b.shape}")


def map2(a: PixelField, b: PixelField, op: str) -> PixelField:
    """Elementwise binary operation; ``div`` refuses divisors below 1e-12 in magnitude."""
    _check_same_shape(a, b)
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}") from None
    if op == "div" and np.any(np.abs(b.data) < DIV_FLOOR):
        raise DivisionFloorViolated(f"divisor magnitude below {DIV_FLOOR:g}")
    return PixelField(fn(a.data, b.data))


@implements(
    "standard normal noise draw",
    "eps ~ N(0, I)",
    tests=("test_sample_gaussian_moments", "test_sample_gaussian_reproducible"),
)
def sample_gaussian(shape: Shape, rng: RngState) -> PixelField:
    if len(shape) != 3 or min(shape) < 1:
        raise ShapeMismatch(f"bad shape {shape}")
    return PixelField(rng.normal(shape))


@implements(
    "clip to the valid intensity range",
    "clip(x, lo, hi)",
    tests=("test_clip_examples", "test_clip_idempotent"),
)
def clip(x: PixelField, lo: float = 0.0, hi: float = 1.0) -> PixelField:
    if not lo <= hi:
        raise InvalidBounds(f"lo={lo} > hi={hi}")
    return PixelField(np.clip(x.data, lo, hi))


def reduce(x: PixelField, stat: str) -> float:
    d = x.data
    if stat == "mean":
        return float(d.mean())
    if stat == "l1_norm":
        return float(np.abs(d).sum())
    if stat == "l2_norm":
        return float(np.sqrt(np.sum(d * d)))
    if stat == "max_abs":
        return float(np.abs(d).max())
    raise ValueError(f"unknown statistic {stat!r}")


def psnr(a: PixelField, b: PixelField, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    _check_same_shape(a, b)
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)

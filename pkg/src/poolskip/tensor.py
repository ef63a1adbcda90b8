"""Dense double-precision tensor value type.

A :class:`Tensor` is a thin immutable wrapper around a row-major float64
numpy array. Kernels in :mod:`poolskip.ops` take plain arrays; anything that
implements ``__array__`` (including ``Tensor``) is accepted there.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeMismatch, ZeroExtent


@dataclass(frozen=True)
class Shape2D:
    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ZeroExtent(f"extents must be >= 1, got ({self.h}, {self.w})")


class Tensor:
    __slots__ = ("_data",)

    def __init__(self, array):
        arr = np.array(array, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if 0 in arr.shape:
            raise ZeroExtent(f"zero extent in shape {arr.shape}")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def from_data(cls, shape: Sequence[int], values: Iterable[float]) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ZeroExtent(f"zero extent in shape {shape}")
        flat = np.asarray(list(values), dtype=np.float64)
        if flat.size != int(np.prod(shape)):
            raise ShapeMismatch(f"{flat.size} values do not fill shape {shape}")
        return cls(flat.reshape(shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self._data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self._data

    def __array__(self, dtype=None, copy=None):
        if dtype is not None and dtype != self._data.dtype:
            return self._data.astype(dtype)
        return self._data.copy() if copy else self._data

    def get(self, *index: int) -> float:
        if len(index) != self._data.ndim:
            raise ShapeMismatch(f"index of rank {len(index)} for tensor of rank {self._data.ndim}")
        offset = 0
        for i, (k, n) in enumerate(zip(index, self.shape)):
            if not 0 <= k < n:
                raise IndexError(f"index {k} out of range for axis {i} of extent {n}")
            offset = offset * n + k
        return float(self.data[offset])

    def __add__(self, other: "Tensor") -> "Tensor":
        return tensor_add(self, other)

    def __mul__(self, s: float) -> "Tensor":
        return tensor_scale(self, s)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={self._data.tolist()!r})"


def tensor_from_data(shape: Sequence[int], values: Iterable[float]) -> Tensor:
    return Tensor.from_data(shape, values)


def tensor_add(a, b) -> Tensor:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot add shapes {a.shape} and {b.shape}")
    return Tensor(a + b)


def tensor_scale(a, s: float) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64) * float(s))

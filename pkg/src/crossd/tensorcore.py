"""Dense array substrate.

Tensors are plain C-contiguous ``numpy.ndarray`` objects (float64 by default,
complex128 for spectra). The helpers here add the strictness the rest of the
package relies on: explicit shape validation, no broadcasting, and operations
that always return new arrays.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

DTYPE = np.float64
CDTYPE = np.complex128


class ShapeError(ValueError):
    """Raised when extents are invalid or two operands disagree in shape."""


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def zeros(shape: Sequence[int], dtype=DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


def ones(shape: Sequence[int], dtype=DTYPE) -> np.ndarray:
    return np.ones(_check_shape(shape), dtype=dtype)


def from_values(shape: Sequence[int], values: Sequence[float], dtype=DTYPE) -> np.ndarray:
    shape = _check_shape(shape)
    data = np.array(values, dtype=dtype).ravel()
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"{data.size} values cannot fill shape {shape}")
    return data.reshape(shape).copy()


def row_major_strides(shape: Sequence[int]) -> tuple[int, ...]:
    """Element strides for a contiguous row-major layout (last stride is 1)."""
    strides = [1] * len(shape)
    for k in range(len(shape) - 2, -1, -1):
        strides[k] = strides[k + 1] * int(shape[k + 1])
    return tuple(strides)


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    if len(index) != len(shape):
        raise ShapeError(f"index rank {len(index)} does not match shape rank {len(shape)}")
    for i, n in zip(index, shape):
        if not 0 <= i < n:
            raise IndexError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
    return sum(int(i) * s for i, s in zip(index, row_major_strides(shape)))


def slice_axis(t: np.ndarray, axis: int, pos: int) -> np.ndarray:
    """Fix ``axis`` at ``pos`` and return the rank n-1 remainder as a copy."""
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    n = t.shape[axis]
    if not 0 <= pos < n:
        raise IndexError(f"position {pos} out of range for extent {n}")
    return np.ascontiguousarray(np.take(t, pos, axis=axis))


def roll(t: np.ndarray, shifts: Sequence[int] | int, axes: Sequence[int] | None = None) -> np.ndarray:
    """Circular shift: the element at ``i`` moves to ``(i + shift) mod extent``.

    ``shifts`` is either one integer per axis listed in ``axes`` (all axes when
    ``axes`` is None) or a single integer applied to every such axis.
    """
    if axes is None:
        axes = tuple(range(t.ndim))
    axes = tuple(axes)
    if np.isscalar(shifts):
        shifts = (int(shifts),) * len(axes)
    shifts = tuple(int(s) for s in shifts)
    if len(shifts) != len(axes):
        raise ShapeError(f"{len(shifts)} shifts given for {len(axes)} axes")
    out = t
    for ax, s in zip(axes, shifts):
        n = t.shape[ax]
        src = (np.arange(n) - s) % n
        out = np.take(out, src, axis=ax)
    return np.ascontiguousarray(out) if out is not t else t.copy()


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b)
    return a + b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b)
    return a * b


def l2_norm(t: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(t) ** 2)))


def matmul3(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """3x3 matrix times 3-vector."""
    a = np.asarray(a)
    v = np.asarray(v)
    if a.shape != (3, 3) or v.shape != (3,):
        raise ShapeError(f"matmul3 expects (3, 3) @ (3,), got {a.shape} @ {v.shape}")
    return np.array([a[r, 0] * v[0] + a[r, 1] * v[1] + a[r, 2] * v[2] for r in range(3)])

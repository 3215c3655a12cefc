"""Dense matrices over emulated formats.

Matrices are immutable float64 arrays whose elements are representable in
an attached format. All operations are deterministic: accumulation is
strictly left-to-right in index order, so results are bit-identical across
platforms, backends and thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .formats import FloatFormat

__all__ = ["Matrix", "random_matrix", "matmul", "softmax_rows", "transpose"]


@dataclass(frozen=True)
class Matrix:
    """Row-major 2-D array of carrier reals, all representable in format."""

    data: np.ndarray
    format: FloatFormat
    _trusted: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"Matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Matrix dimensions must be >= 1, got {arr.shape}")
        if not self._trusted:
            arr = backend.active.quantize_array(arr, *self.format.params())
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def astype(self, fmt: FloatFormat) -> "Matrix":
        """Re-quantize into fmt (a fresh rounding of the carrier values)."""
        return Matrix(self.data, fmt)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return (
            self.format == other.format
            and self.shape == other.shape
            and np.array_equal(
                self.data.view(np.uint64), other.data.view(np.uint64)
            )
        )


def _wrap(arr: np.ndarray, fmt: FloatFormat) -> Matrix:
    # Kernel outputs are already quantized; skip the construction rounding.
    return Matrix(arr, fmt, _trusted=True)


def random_matrix(
    rows: int,
    cols: int,
    seed: int,
    fmt: FloatFormat,
    stream: int = 0,
    distribution: str = "normal",
) -> Matrix:
    """Seeded i.i.d. random matrix from Philox4x32-10, quantized to fmt.

    Counter-based generation: identical (seed, stream, dims, fmt) gives
    bit-identical matrices on any platform at any thread count. The normal
    variant applies the AS241 inverse CDF to (0,1) uniforms; "uniform"
    draws from uniform(-1, 1) instead.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be >= 1, got {rows}x{cols}")
    n = rows * cols
    if distribution == "normal":
        vals = backend.active.standard_normal(seed, stream, n)
    elif distribution == "uniform":
        vals = 2.0 * backend.active.uniform01(seed, stream, n) - 1.0
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    vals = backend.active.quantize_array(vals.reshape(rows, cols), *fmt.params())
    return _wrap(vals, fmt)


def matmul(a: Matrix, b: Matrix, fmt: FloatFormat, accumulate_in_carrier: bool = False) -> Matrix:
    """a @ b; every multiply and add rounded into fmt, left-to-right over k.

    With accumulate_in_carrier the dot products accumulate at float64 and
    only the final sum is rounded (tensor-core-style mixed accumulation).
    """
    if a.cols != b.rows:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = backend.active.matmul_rounded(
        a.data, b.data, *fmt.params(), accumulate_in_carrier
    )
    return _wrap(out, fmt)


def softmax_rows(a: Matrix, fmt: FloatFormat, accumulate_in_carrier: bool = False) -> Matrix:
    """Stable softmax per row: max-subtract, exp, normalize; all rounded."""
    out = backend.active.softmax_rows_rounded(
        a.data, *fmt.params(), accumulate_in_carrier
    )
    return _wrap(out, fmt)


def transpose(a: Matrix) -> Matrix:
    return _wrap(np.ascontiguousarray(a.data.T), a.format)

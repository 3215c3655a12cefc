"""Deviation and distributional-distance metrics.

All metrics run in the float64 carrier regardless of the kernel format the
inputs were produced at: the measuring instrument must out-resolve the
measured effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .matrix import Matrix

__all__ = [
    "DeviationReport",
    "max_difference",
    "diff_stats",
    "wasserstein_1d",
    "golden_deviation",
]


@dataclass(frozen=True)
class DeviationReport:
    """Summary of one elementwise comparison of two equal-shape matrices."""

    max_abs_diff: float
    mean_diff: float
    std_diff: float
    n_elements: int
    context: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if np.isnan(self.max_abs_diff):
            return  # NaN-poisoned comparison; invariants do not apply
        if self.max_abs_diff < 0 or self.std_diff < 0:
            raise ValueError("max_abs_diff and std_diff must be >= 0")
        # float slack: |mean| can exceed max only through roundoff
        if abs(self.mean_diff) > self.max_abs_diff * (1 + 1e-12) + 1e-300:
            raise ValueError("invariant violated: max_abs_diff >= |mean_diff|")


def _as_array(a) -> np.ndarray:
    if isinstance(a, Matrix):
        return a.data
    return np.asarray(a, dtype=np.float64)


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def max_difference(a, b) -> float:
    """max over elements of |a - b| in carrier precision.

    NaN anywhere in the difference poisons the result to NaN, which no
    valid comparison can produce (valid results are >= 0).
    """
    a, b = _as_array(a), _as_array(b)
    _check_shapes(a, b)
    d = np.abs(a - b)
    if np.isnan(d).any():
        return float("nan")
    return float(d.max()) if d.size else 0.0


def diff_stats(a, b) -> tuple[float, float]:
    """(mean, population std) of the signed differences a - b."""
    a, b = _as_array(a), _as_array(b)
    _check_shapes(a, b)
    d = (a - b).ravel()
    return float(d.mean()), float(d.std())


def wasserstein_1d(xs, ys) -> float:
    """Exact 1-D optimal-transport cost between two empirical distributions.

    Equal sizes: mean absolute difference of the sorted samples. Unequal
    sizes: integral of |CDF_x - CDF_y| over the merged breakpoints.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size == 0 or ys.size == 0:
        raise ValueError("samples must be nonempty")
    xs = np.sort(xs)
    ys = np.sort(ys)
    if xs.size == ys.size:
        return float(np.abs(xs - ys).mean())
    allv = np.concatenate([xs, ys])
    allv.sort(kind="mergesort")
    deltas = np.diff(allv)
    cdf_x = np.searchsorted(xs, allv[:-1], side="right") / xs.size
    cdf_y = np.searchsorted(ys, allv[:-1], side="right") / ys.size
    return float(np.sum(np.abs(cdf_x - cdf_y) * deltas))


def golden_deviation(output, golden, context: dict[str, Any] | None = None) -> DeviationReport:
    """Bundle max/mean/std deviation of an output against its golden value."""
    a, b = _as_array(output), _as_array(golden)
    _check_shapes(a, b)
    mean, std = diff_stats(a, b)
    return DeviationReport(
        max_abs_diff=max_difference(a, b),
        mean_diff=mean,
        std_diff=std,
        n_elements=int(a.size),
        context=dict(context or {}),
    )

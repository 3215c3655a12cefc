"""Baseline and tiled (flash-style) attention kernels over emulated formats.

baseline_attention materializes the full n x n score matrix and applies a
stable row softmax. flash_attention tiles the computation into
(block_rows x block_cols) blocks and maintains a running (max, denominator,
output) triple per query row, rescaling partial outputs whenever a new
running max appears; the score matrix is never materialized. Both kernels
round every elementary operation into the target format, so their outputs
differ only through rounding and operation reordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .formats import FloatFormat
from .matrix import Matrix, _wrap

__all__ = [
    "AttentionConfig",
    "BlockGeometry",
    "baseline_attention",
    "flash_attention",
    "default_block_geometry",
    "perturb_geometry",
]

VARIANTS = ("baseline", "flash")
PERTURBATIONS = ("none", "swap_dims", "square_of_equal_area")


@dataclass(frozen=True)
class BlockGeometry:
    """Tile sizes: block_rows query rows by block_cols key/value rows."""

    block_rows: int
    block_cols: int

    def __post_init__(self) -> None:
        if self.block_rows < 1 or self.block_cols < 1:
            raise ValueError(f"block dims must be >= 1, got {self}")

    @property
    def area(self) -> int:
        return self.block_rows * self.block_cols

    def clamped(self, n: int) -> "BlockGeometry":
        """Geometry actually used for an n-row input."""
        return BlockGeometry(min(self.block_rows, n), min(self.block_cols, n))


@dataclass(frozen=True)
class AttentionConfig:
    """Everything that determines one kernel run on seeded inputs."""

    seq_len: int
    head_dim: int
    format: FloatFormat
    variant: str = "flash"
    geometry: BlockGeometry | None = None
    sram_elems: int | None = None
    accumulate_in_carrier: bool = False
    distribution: str = "normal"

    def __post_init__(self) -> None:
        if self.seq_len < 1 or self.head_dim < 1:
            raise ValueError("seq_len and head_dim must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant == "flash":
            geom = self.geometry
            if geom is None and self.sram_elems is not None:
                geom = default_block_geometry(self.sram_elems, self.head_dim)
                object.__setattr__(self, "geometry", geom)
            if geom is None:
                raise ValueError("flash variant needs geometry or sram_elems")

    @property
    def scale(self) -> float:
        """1/sqrt(head_dim); recomputed, never stored."""
        return 1.0 / math.sqrt(self.head_dim)


def _check_qkv(q: Matrix, k: Matrix, v: Matrix) -> tuple[int, int]:
    if not (q.shape == k.shape == v.shape):
        raise ValueError(f"Q, K, V must share an NxD shape: {q.shape}, {k.shape}, {v.shape}")
    return q.shape


def baseline_attention(
    q: Matrix, k: Matrix, v: Matrix, fmt: FloatFormat, accumulate_in_carrier: bool = False
) -> Matrix:
    """softmax(Q K^T / sqrt(d)) V with the full score matrix materialized."""
    n, d = _check_qkv(q, k, v)
    scale = 1.0 / math.sqrt(d)
    p = fmt.params()
    acc = accumulate_in_carrier
    s = backend.active.matmul_rounded(q.data, np.ascontiguousarray(k.data.T), *p, acc)
    with np.errstate(all="ignore"):
        s = backend.active.quantize_array(scale * s, *p)
    a = backend.active.softmax_rows_rounded(s, *p, acc)
    out = backend.active.matmul_rounded(a, v.data, *p, acc)
    return _wrap(out, fmt)


def flash_attention(
    q: Matrix,
    k: Matrix,
    v: Matrix,
    fmt: FloatFormat,
    geom: BlockGeometry,
    accumulate_in_carrier: bool = False,
    col_block_order=None,
    return_running_stats: bool = False,
):
    """Tiled online-softmax attention.

    Ragged tail blocks run at their natural smaller size; geometry larger
    than the sequence is clamped. col_block_order optionally permutes the
    set of column blocks (the row-block loop and within-block order are
    fixed). With return_running_stats the per-row running (max, denominator)
    pair is returned alongside the output.
    """
    n, d = _check_qkv(q, k, v)
    geom = geom.clamped(n)
    n_blocks = (n + geom.block_cols - 1) // geom.block_cols
    order = None
    if col_block_order is not None:
        order = np.asarray(col_block_order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(n_blocks)):
            raise ValueError(
                f"col_block_order must permute range({n_blocks}), got {order.tolist()}"
            )
    res = backend.active.flash_forward(
        q.data,
        k.data,
        v.data,
        1.0 / math.sqrt(d),
        geom.block_rows,
        geom.block_cols,
        *fmt.params(),
        accumulate_in_carrier,
        order,
        return_running_stats,
    )
    if return_running_stats:
        out, m, l = res
        return _wrap(out, fmt), m, l
    return _wrap(res, fmt)


def default_block_geometry(sram_elems: int, head_dim: int) -> BlockGeometry:
    """Block sizes from an SRAM budget of M elements:

        Bc = ceil(M / 4d),  Br = min(ceil(M / 4d), d)
    """
    if head_dim < 1:
        raise ValueError("head_dim must be >= 1")
    if sram_elems < 4 * head_dim:
        raise ValueError(
            f"sram_elems={sram_elems} < 4*head_dim={4 * head_dim}: block would be empty"
        )
    bc = -(-sram_elems // (4 * head_dim))
    return BlockGeometry(min(bc, head_dim), bc)


def perturb_geometry(geom: BlockGeometry, kind: str, factor: float | None = None) -> BlockGeometry:
    """Geometry perturbations studied in the block sweeps.

    swap_dims exchanges the Br/Bc values; square_of_equal_area replaces both
    with round(sqrt(area)); scale_area scales both dims by sqrt(factor).
    Dims are floored at 1; clamping to the sequence happens at kernel time.
    """
    if kind == "none":
        return geom
    if kind == "swap_dims":
        return BlockGeometry(geom.block_cols, geom.block_rows)
    if kind == "square_of_equal_area":
        side = max(1, round(math.sqrt(geom.area)))
        return BlockGeometry(side, side)
    if kind == "scale_area":
        if factor is None or factor <= 0:
            raise ValueError("scale_area needs a positive factor")
        r = math.sqrt(factor)
        return BlockGeometry(
            max(1, round(geom.block_rows * r)), max(1, round(geom.block_cols * r))
        )
    raise ValueError(f"unknown perturbation {kind!r}")

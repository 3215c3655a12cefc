"""attnlab: numeric-deviation laboratory for attention kernels.

Re-implements baseline and flash-style attention over software-emulated
floating-point formats, measures their output deviation under precision,
sequence-length and block-geometry sweeps, and bounds downstream impact
with a weight-divergence proxy on toy training runs.
"""

from .attention import (
    AttentionConfig,
    BlockGeometry,
    baseline_attention,
    default_block_geometry,
    flash_attention,
    perturb_geometry,
)
from .backend import backend_name
from .formats import BF16, FP16, FP32, FP64, EmulatedValue, FloatFormat, parse_format, ulp
from .matrix import Matrix, matmul, random_matrix, softmax_rows, transpose
from .metrics import DeviationReport, diff_stats, golden_deviation, max_difference, wasserstein_1d
from .numerics import quantize, rounded_op

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "BlockGeometry",
    "BF16",
    "FP16",
    "FP32",
    "FP64",
    "DeviationReport",
    "EmulatedValue",
    "FloatFormat",
    "Matrix",
    "backend_name",
    "baseline_attention",
    "default_block_geometry",
    "diff_stats",
    "flash_attention",
    "golden_deviation",
    "matmul",
    "max_difference",
    "parse_format",
    "perturb_geometry",
    "quantize",
    "random_matrix",
    "rounded_op",
    "softmax_rows",
    "transpose",
    "ulp",
    "wasserstein_1d",
]

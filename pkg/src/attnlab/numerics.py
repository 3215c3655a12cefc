"""Correctly rounded scalar/array operations over emulated formats.

Semantics: evaluate in the float64 carrier, then round into the target
format. For add/sub/mul/div/max on format values this yields correctly
rounded target-format arithmetic (one rounding); exp is carrier-evaluated
then rounded, i.e. faithful rather than guaranteed correctly rounded.
All functions are pure.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .formats import FP64, FloatFormat

__all__ = [
    "quantize",
    "quantize_array",
    "rounded_op",
    "exp_rounded",
    "scale_rounded",
    "add_rounded",
    "sub_rounded",
    "mul_rounded",
    "div_rounded",
    "max_carrier",
]

_BINARY = ("add", "sub", "mul", "div", "max")


def quantize(x: float, fmt: FloatFormat) -> float:
    """Nearest fmt value to x (ties to even); total on the extended reals."""
    return float(backend.active.quantize_array(np.array([x], dtype=np.float64), *fmt.params())[0])


def quantize_array(x: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    return backend.active.quantize_array(np.asarray(x, dtype=np.float64), *fmt.params())


def rounded_op(op: str, operands, fmt: FloatFormat) -> float:
    """One elementary operation in fmt: carrier-evaluate, then quantize.

    op is one of add/sub/mul/div (binary), exp (unary), max (binary,
    returns an operand unmodified: no rounding is ever needed).
    """
    if op == "exp":
        (x,) = operands
        return quantize(float(backend.active.exp_array(np.array([float(x)]))[0]), fmt)
    if op not in _BINARY:
        raise ValueError(f"unknown op {op!r}")
    a, b = (float(v) for v in operands)
    if op == "max":
        return max_carrier(a, b)
    with np.errstate(all="ignore"):
        if op == "add":
            r = a + b
        elif op == "sub":
            r = a - b
        elif op == "mul":
            r = a * b
        else:
            r = np.divide(a, b)
    return quantize(float(r), fmt)


def max_carrier(a: float, b: float) -> float:
    """Max with NaN poisoning; the first operand wins ties (incl. -0 vs 0)."""
    if np.isnan(a) or np.isnan(b):
        return float("nan")
    return b if b > a else a


def exp_rounded(x: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    return backend.active.quantize_array(backend.active.exp_array(x), *fmt.params())


def log_carrier(x: np.ndarray) -> np.ndarray:
    return backend.active.log_array(x)


def scale_rounded(a: np.ndarray, s: float, fmt: FloatFormat) -> np.ndarray:
    """Elementwise s * a, one rounding per element."""
    with np.errstate(all="ignore"):
        return quantize_array(s * np.asarray(a, dtype=np.float64), fmt)


def _ew(op, a, b, fmt: FloatFormat) -> np.ndarray:
    with np.errstate(all="ignore"):
        return quantize_array(op(np.asarray(a, np.float64), np.asarray(b, np.float64)), fmt)


def add_rounded(a, b, fmt: FloatFormat = FP64) -> np.ndarray:
    return _ew(np.add, a, b, fmt)


def sub_rounded(a, b, fmt: FloatFormat = FP64) -> np.ndarray:
    return _ew(np.subtract, a, b, fmt)


def mul_rounded(a, b, fmt: FloatFormat = FP64) -> np.ndarray:
    return _ew(np.multiply, a, b, fmt)


def div_rounded(a, b, fmt: FloatFormat = FP64) -> np.ndarray:
    return _ew(np.divide, a, b, fmt)

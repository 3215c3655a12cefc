"""Emulated floating-point formats.

A format is (exponent_bits, mantissa_bits) with IEEE-754 semantics: hidden
leading bit, round-to-nearest-even, gradual underflow, +-inf on overflow.
Values are carried as float64 ("the carrier"); a value "in" a format is a
float64 that the format's rounding maps to itself.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

__all__ = [
    "FloatFormat",
    "EmulatedValue",
    "BF16",
    "FP16",
    "FP32",
    "FP64",
    "PRESETS",
    "parse_format",
    "ulp",
]

_FORMAT_RE = re.compile(r"^e(\d+)m(\d+)$")


@dataclass(frozen=True)
class FloatFormat:
    """An emulated binary floating-point format.

    mantissa_bits counts explicit stored fraction bits (the implicit
    leading 1 is not included), so FP32 is (8, 23) and BF16 is (8, 7).
    """

    name: str
    exponent_bits: int
    mantissa_bits: int

    def __post_init__(self) -> None:
        if not (2 <= self.exponent_bits <= 11):
            raise ValueError(
                f"exponent_bits must be in [2, 11], got {self.exponent_bits}"
            )
        if not (1 <= self.mantissa_bits <= 52):
            raise ValueError(
                f"mantissa_bits must be in [1, 52], got {self.mantissa_bits}"
            )

    @property
    def bias(self) -> int:
        return (1 << (self.exponent_bits - 1)) - 1

    @property
    def min_exponent(self) -> int:
        """Unbiased exponent of the smallest normal value."""
        return 1 - self.bias

    @property
    def max_exponent(self) -> int:
        return self.bias

    @property
    def max_finite(self) -> float:
        return math.ldexp(2.0 - math.ldexp(1.0, -self.mantissa_bits), self.max_exponent)

    @property
    def smallest_subnormal(self) -> float:
        return math.ldexp(1.0, self.min_exponent - self.mantissa_bits)

    @property
    def eps(self) -> float:
        """Spacing of the format at 1.0."""
        return math.ldexp(1.0, -self.mantissa_bits)

    def params(self) -> tuple[int, int, int]:
        """(mantissa_bits, te, te_max) as consumed by the backends.

        te / te_max are the format's min-normal and max-normal exponents
        rebased to the float64 biased-exponent scale.
        """
        return (self.mantissa_bits, self.min_exponent + 1023, self.max_exponent + 1023)

    def __str__(self) -> str:
        return self.name


BF16 = FloatFormat("bf16", 8, 7)
FP16 = FloatFormat("fp16", 5, 10)
FP32 = FloatFormat("fp32", 8, 23)
FP64 = FloatFormat("fp64", 11, 52)

PRESETS: dict[str, FloatFormat] = {f.name: f for f in (BF16, FP16, FP32, FP64)}


def parse_format(spec: str) -> FloatFormat:
    """Resolve a format name: a preset ("bf16") or explicit "e<E>m<M>".

    An explicit spec matching a preset's widths compares equal to the
    preset (name aside) and is returned with the canonical preset name.
    """
    key = spec.strip().lower()
    if key in PRESETS:
        return PRESETS[key]
    m = _FORMAT_RE.match(key)
    if m is None:
        raise ValueError(
            f"unknown format {spec!r}: expected a preset "
            f"({', '.join(PRESETS)}) or 'e<E>m<M>'"
        )
    e, mb = int(m.group(1)), int(m.group(2))
    for preset in PRESETS.values():
        if (preset.exponent_bits, preset.mantissa_bits) == (e, mb):
            return preset
    return FloatFormat(key, e, mb)


def ulp(fmt: FloatFormat, x: float) -> float:
    """Spacing of fmt in the binade of x (subnormal spacing below 2^e_min)."""
    ax = abs(x)
    if math.isnan(ax):
        return math.nan
    if math.isinf(ax) or ax >= math.ldexp(1.0, fmt.min_exponent):
        if math.isinf(ax):
            return math.inf
        e = math.floor(math.log2(ax))
        return math.ldexp(1.0, e - fmt.mantissa_bits)
    return fmt.smallest_subnormal


@dataclass(frozen=True)
class EmulatedValue:
    """A carrier float tagged with the format it is representable in."""

    value: float
    format: FloatFormat
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        from .numerics import quantize  # deferred: numerics imports formats

        v = self.value
        if not math.isnan(v) and quantize(v, self.format) != v:
            raise ValueError(f"{v!r} is not representable in {self.format.name}")

    @classmethod
    def from_real(cls, x: float, fmt: FloatFormat) -> "EmulatedValue":
        from .numerics import quantize

        return cls(quantize(x, fmt), fmt)

"""Exact fixed-point arithmetic primitives.

Every quantity in the integer datapath is an integer ``raw`` tagged with a
:class:`QFormat`; the represented real value is ``raw / 2**frac_bits``, exactly.
All arithmetic here is exact integer arithmetic except the declared roundings,
and every rounding in the pipeline is round-to-nearest with ties away from
zero (odd-symmetric, so negating a value negates its rounded image).

The backing integers are plain Python ints, but formats and intermediate
products must fit a signed 48-bit working window; the budget is enforced by
explicit checks instead of wraparound.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

CARRIER_BITS = 48
MAX_PRODUCT_FRAC = 40

ROUND_HALF_AWAY = "half-away"
ROUND_FLOOR = "floor"


class BudgetError(OverflowError):
    """A value or format exceeded the 48-bit working budget."""


_QFMT_RE = re.compile(r"^Q(\d+)\.(\d+)(u?)$")


@dataclass(frozen=True)
class QFormat:
    """Qm.n descriptor: m integer bits, n fraction bits, sign bit extra.

    A signed Q5.11 therefore occupies 17 stored bits: raws span
    [-2**16, 2**16 - 1] and values span [-32.0, 32.0 - 2**-11].
    """

    int_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self):
        if self.int_bits < 0 or self.frac_bits < 0:
            raise ValueError(f"negative field width in Q{self.int_bits}.{self.frac_bits}")
        if self.total_bits > CARRIER_BITS:
            raise BudgetError(
                f"{self} needs {self.total_bits} bits, budget is {CARRIER_BITS}"
            )

    @property
    def total_bits(self) -> int:
        return self.int_bits + self.frac_bits + (1 if self.signed else 0)

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.int_bits + self.frac_bits)) if self.signed else 0

    @property
    def raw_max(self) -> int:
        return (1 << (self.int_bits + self.frac_bits)) - 1

    @property
    def min_value(self) -> float:
        return self.raw_min / self.scale

    @property
    def max_value(self) -> float:
        return self.raw_max / self.scale

    def clamp_raw(self, raw: int) -> int:
        return max(self.raw_min, min(self.raw_max, raw))

    def __str__(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}" + ("" if self.signed else "u")

    @classmethod
    def parse(cls, text: str) -> "QFormat":
        m = _QFMT_RE.match(text.strip())
        if not m:
            raise ValueError(f"unknown Q-format string {text!r}")
        return cls(int(m.group(1)), int(m.group(2)), signed=(m.group(3) != "u"))


# Formats used throughout the default pipeline.
Q5_11 = QFormat(5, 11)
Q2_14 = QFormat(2, 14)
Q1_15 = QFormat(1, 15)
Q4_12 = QFormat(4, 12)
Q0_8U = QFormat(0, 8, signed=False)
Q0_16U = QFormat(0, 16, signed=False)


@dataclass(frozen=True)
class FxValue:
    """An integer raw value bound to its QFormat."""

    raw: int
    fmt: QFormat

    def __post_init__(self):
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise ValueError(f"raw {self.raw} outside {self.fmt} range")

    @property
    def value(self) -> float:
        return self.raw / self.fmt.scale

    def __neg__(self) -> "FxValue":
        return FxValue(-self.raw, self.fmt)


def round_half_away(y: Fraction) -> int:
    """Nearest integer to an exact rational, ties away from zero."""
    n, r = divmod(y.numerator, y.denominator)
    twice = 2 * r
    if twice > y.denominator or (twice == y.denominator and y >= 0):
        return n + 1
    return n


def round_shift(raw: int, shift: int, rounding: str = ROUND_HALF_AWAY) -> int:
    """Divide ``raw`` by ``2**shift`` with the requested rounding."""
    if shift < 0:
        raise ValueError("negative shift")
    if shift == 0:
        return raw
    if rounding == ROUND_FLOOR:
        return raw >> shift
    if rounding != ROUND_HALF_AWAY:
        raise ValueError(f"unknown rounding mode {rounding!r}")
    half = 1 << (shift - 1)
    if raw >= 0:
        return (raw + half) >> shift
    return -((-raw + half) >> shift)


def to_fixed(x, fmt: QFormat, rounding: str = ROUND_HALF_AWAY) -> FxValue:
    """Convert a real number to the nearest representable FxValue.

    Out-of-range inputs saturate to the format bounds; NaN is rejected.
    The conversion is computed on the exact rational image of ``x`` so
    ties are decided exactly, never by double rounding.
    """
    if isinstance(x, float) and math.isnan(x):
        raise ValueError("cannot convert NaN to fixed point")
    if isinstance(x, float) and math.isinf(x):
        return FxValue(fmt.raw_max if x > 0 else fmt.raw_min, fmt)
    y = Fraction(x) * fmt.scale
    if rounding == ROUND_HALF_AWAY:
        raw = round_half_away(y)
    elif rounding == ROUND_FLOOR:
        raw = math.floor(y)
    else:
        raise ValueError(f"unknown rounding mode {rounding!r}")
    return FxValue(fmt.clamp_raw(raw), fmt)


def from_fixed(v: FxValue) -> float:
    """Exact real value of ``v`` (raws fit well inside a double mantissa)."""
    return v.raw / v.fmt.scale


def fx_mul(a: FxValue, b: FxValue) -> FxValue:
    """Exact product; result fraction is the sum of the operand fractions.

    The result format is derived wide enough to hold any product of the
    operand formats; if that exceeds the 48-bit carrier the operation is
    refused outright, so pipeline widths are proven rather than probed.
    """
    frac = a.fmt.frac_bits + b.fmt.frac_bits
    if frac > MAX_PRODUCT_FRAC:
        raise BudgetError(f"product fraction {frac} exceeds {MAX_PRODUCT_FRAC}")
    both_signed = a.fmt.signed and b.fmt.signed
    fmt = QFormat(
        a.fmt.int_bits + b.fmt.int_bits + (1 if both_signed else 0),
        frac,
        signed=a.fmt.signed or b.fmt.signed,
    )
    return FxValue(a.raw * b.raw, fmt)


def fx_rescale(
    v: FxValue,
    target_frac: int,
    saturate_to: QFormat,
    rounding: str = ROUND_HALF_AWAY,
) -> FxValue:
    """Right-shift ``v`` to a coarser fraction, round, then saturate."""
    if target_frac > v.fmt.frac_bits:
        raise ValueError("rescale only narrows the fraction")
    if saturate_to.frac_bits != target_frac:
        raise ValueError("saturation format fraction must equal target_frac")
    raw = round_shift(v.raw, v.fmt.frac_bits - target_frac, rounding)
    return FxValue(saturate_to.clamp_raw(raw), saturate_to)

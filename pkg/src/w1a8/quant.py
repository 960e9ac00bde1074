"""Quantization math: weight binarization, 8-bit activations, scale conversion.

Weights of the main convolution layers collapse to their signs; activations
are unsigned 8-bit on a learned step grid. Per-input-channel compensation
scales (``mul_prev``) and per-output-channel rescales (``div_current``) are
carried as reals in the parameter manifest and converted here to the fixed
formats the integer engines consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .fixedpoint import Q0_16U, Q2_14, FxValue, QFormat, round_half_away, to_fixed

ACT_MAX = 255

DEFAULT_MUL_FMT = Q2_14
DEFAULT_DIV_FMT = Q0_16U


class ScaleRangeError(ValueError):
    """A channel scale falls outside its declared fixed format."""


@dataclass(frozen=True)
class BinaryWeight:
    """Sign-only weights, one of {-1, +1} per element, [oc][ic][ky][kx]."""

    signs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.signs)
        if not np.isin(s, (-1, 1)).all():
            raise ValueError("binary weights must be exactly -1 or +1")
        object.__setattr__(self, "signs", s.astype(np.int8))

    @property
    def shape(self):
        return self.signs.shape


def binarize(w: np.ndarray) -> BinaryWeight:
    """Element-wise sign with sign(0) = +1."""
    w = np.asarray(w, dtype=np.float64)
    if np.isnan(w).any():
        raise ValueError("NaN weight cannot be binarized")
    return BinaryWeight(np.where(w < 0, -1, 1).astype(np.int8))


def _round_half_away_np(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


@dataclass(frozen=True)
class ActQuantParams:
    """Activation step size plus its fixed-point images."""

    step: float
    step_fx: FxValue
    inv_step_fx: FxValue

    @classmethod
    def from_step(
        cls,
        step: float,
        step_fmt: QFormat = DEFAULT_MUL_FMT,
        inv_fmt: QFormat = DEFAULT_DIV_FMT,
    ) -> "ActQuantParams":
        if not step > 0:
            raise ValueError("activation step must be positive")
        return cls(float(step), to_fixed(step, step_fmt), to_fixed(1.0 / step, inv_fmt))


def quantize_act(x, p: ActQuantParams):
    """clip(round(x / step), 0, 255); works on scalars and arrays."""
    q = _round_half_away_np(np.asarray(x, dtype=np.float64) / p.step)
    q = np.clip(q, 0, ACT_MAX).astype(np.uint8)
    return q if q.ndim else int(q)


def dequantize_act(q, p: ActQuantParams):
    x = np.asarray(q, dtype=np.float64) * p.step
    return x if x.ndim else float(x)


@dataclass(frozen=True)
class ChannelScales:
    """Fixed-point channel scales for one layer.

    ``mul`` holds per-input-channel raws fused into the accumulation;
    ``div`` holds per-output-channel raws applied in post-processing.
    """

    mul: Optional[np.ndarray]  # int64 raws, length = in_channels
    mul_fmt: Optional[QFormat]
    div: Optional[np.ndarray]  # int64 raws, length = out_channels
    div_fmt: Optional[QFormat]


def _scales_raw(values: np.ndarray, fmt: QFormat, role: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if not np.isfinite(values).all():
        raise ScaleRangeError(f"{role} scales must be finite")
    if not (values > 0).all():
        raise ScaleRangeError(f"{role} scales must be positive")
    flat = np.empty(values.size, dtype=np.int64)
    for i, x in enumerate(values.ravel()):
        raw = round_half_away(Fraction(float(x)) * fmt.scale)
        # Saturation would silently rescale a whole channel; refuse instead.
        if not fmt.raw_min <= raw <= fmt.raw_max:
            raise ScaleRangeError(f"{role} scale {x} outside {fmt} range")
        flat[i] = raw
    return flat.reshape(values.shape)


def scales_to_fixed(
    mul_prev: Optional[np.ndarray],
    div_current: Optional[np.ndarray],
    fmt_mul: QFormat = DEFAULT_MUL_FMT,
    fmt_div: QFormat = DEFAULT_DIV_FMT,
) -> ChannelScales:
    """Convert real channel scales to their declared fixed-point formats.

    A scale that would saturate its format is a hard error.
    """
    mul = _scales_raw(mul_prev, fmt_mul, "mul_prev") if mul_prev is not None else None
    div = _scales_raw(div_current, fmt_div, "div_current") if div_current is not None else None
    return ChannelScales(
        mul,
        fmt_mul if mul is not None else None,
        div,
        fmt_div if div is not None else None,
    )

"""Non-streaming oracles: a floating-point forward pass and a direct
fixed-point forward pass.

The float pass mirrors the quantized inference graph in real arithmetic:
weights and biases are the exact real images of their fixed-point raws,
channel scales are the manifest's real values, and each post step rounds to
the 8-bit activation grid. Its input is the real-valued image (bytes / 255).

The direct fixed pass computes the identical integer semantics as the
streaming engine, layer by layer on whole tensors, and is the independent
oracle the streaming engine is checked against bit for bit. Its input is
the raw image bytes read as Q0.8 (byte p means p / 256), so the small
software/hardware input-scale gap is part of the system being modeled.

Post-processing order, shared by both integer engines: accumulate ->
add bias aligned to the accumulator fraction -> multiply by div_current
(exact) -> rescale to fraction 0 with ties away from zero -> clip [0, 255].
The head layer skips the scale/clip and keeps the biased accumulator raw.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .fixedpoint import BudgetError
from .model_graph import CONV_W1A8, LayerSpec, ModelSpec, ParamManifest
from .quant import DEFAULT_DIV_FMT, DEFAULT_MUL_FMT, ChannelScales, scales_to_fixed

# Declared working budgets: accumulation provably fits these, the post
# product must fit the 48-bit carrier, the head raw must fit 32 bits.
W1A8_ACC_LIMIT = (1 << 47) - 1
STD_ACC_LIMIT = (1 << 39) - 1
PRODUCT_LIMIT = (1 << 47) - 1
HEAD_LIMIT = (1 << 31) - 1

ACT_MAX = 255


@dataclass
class LayerCapture:
    """Per-layer tap points: biased accumulator and post-quantization output."""

    name: str
    raw: np.ndarray            # (C, H, W) biased conv output (pre-pool)
    raw_frac: Optional[int]    # fraction bits of raw (None for the float pass)
    post: Optional[np.ndarray] # (C, H, W) u8 activations, pre-pool; None for head


@dataclass
class ForwardTrace:
    layers: List[LayerCapture]
    head: np.ndarray           # (C, H, W) raw head (int64 raws or float64)
    head_frac: Optional[int]

    def capture(self, name: str) -> LayerCapture:
        for cap in self.layers:
            if cap.name == name:
                return cap
        raise KeyError(name)


def _pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def _im2col(x: np.ndarray, kernel: int, pad: int) -> np.ndarray:
    """(C*k*k, H*W) column matrix of sliding windows, zero padded."""
    c, h, w = x.shape
    xp = _pad2d(x, pad)
    cols = np.empty((c, kernel, kernel, h, w), dtype=x.dtype)
    for ky in range(kernel):
        for kx in range(kernel):
            cols[:, ky, kx] = xp[:, ky:ky + h, kx:kx + w]
    return cols.reshape(c * kernel * kernel, h * w)


def conv2d_float(
    x: np.ndarray,
    weights: np.ndarray,
    bias: Optional[np.ndarray] = None,
    padding: Optional[int] = None,
) -> np.ndarray:
    """Plain cross-correlation plus bias; spatial size is preserved.

    x is (C, H, W); weights are (O, C, k, k); padding defaults to k // 2.
    """
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    oc, ic, kh, kw = weights.shape
    if kh != kw:
        raise ValueError("square kernels only")
    if x.shape[0] != ic:
        raise ValueError(f"input has {x.shape[0]} channels, weights expect {ic}")
    if padding is None:
        padding = kh // 2
    cols = _im2col(x, kh, padding)
    out = weights.reshape(oc, -1) @ cols
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None]
    return out.reshape(oc, x.shape[1], x.shape[2])


def maxpool2x2(x: np.ndarray) -> np.ndarray:
    """Stride-2 window max per channel; dims must be even."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max-pool needs even dims, got {h}x{w}")
    blocks = x.reshape(c, h // 2, 2, w // 2, 2)
    return blocks.max(axis=(2, 4))


def _round_half_away_np(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def _round_shift_i64(p: np.ndarray, shift: int) -> np.ndarray:
    """Vectorized round-to-nearest, ties away from zero, by 2**shift."""
    if shift == 0:
        return p
    half = np.int64(1) << np.int64(shift - 1)
    mag = np.abs(p)
    q = (mag + half) >> np.int64(shift)
    return np.where(p >= 0, q, -q)


def layer_scales(layer: LayerSpec, lp) -> ChannelScales:
    """Fixed-point images of this layer's channel scales."""
    if layer.conv_kind != CONV_W1A8 and not layer.has_post:
        return ChannelScales(None, None, None, None)
    return scales_to_fixed(
        lp.mul if layer.conv_kind == CONV_W1A8 else None,
        lp.div if layer.has_post else None,
        fmt_mul=layer.mul_fmt or DEFAULT_MUL_FMT,
        fmt_div=layer.div_fmt or DEFAULT_DIV_FMT,
    )


def direct_layer_forward(
    layer: LayerSpec,
    lp,
    scales: ChannelScales,
    act: np.ndarray,
    act_frac: int,
):
    """One layer of the direct integer pipeline.

    Returns (biased accumulator (C,H,W) int64, accumulator fraction,
    post u8 output or None, next wire activations or head raws).
    """
    cols = _im2col(act.astype(np.int64, copy=False), layer.kernel, layer.padding)
    if layer.conv_kind == CONV_W1A8:
        signs = lp.weights.astype(np.int64).reshape(layer.out_channels, -1)
        mul = np.repeat(scales.mul, layer.kernel * layer.kernel)
        acc = (signs * mul[None, :]) @ cols
        acc_frac = act_frac + scales.mul_fmt.frac_bits
        limit = W1A8_ACC_LIMIT
    else:
        w = lp.weights.astype(np.int64).reshape(layer.out_channels, -1)
        acc = w @ cols
        acc_frac = act_frac + layer.weight_fmt.frac_bits
        limit = STD_ACC_LIMIT
    bias_shift = acc_frac - layer.bias_fmt.frac_bits
    if bias_shift < 0:
        raise BudgetError(f"{layer.name}: bias fraction exceeds accumulator fraction")
    biased = acc + (lp.bias.astype(np.int64) << np.int64(bias_shift))[:, None]
    if np.abs(biased).max(initial=0) > limit:
        raise BudgetError(f"{layer.name}: accumulator budget exceeded")
    h_w = act.shape[1:]
    biased_chw = biased.reshape(layer.out_channels, *h_w)
    if not layer.has_post:
        if np.abs(biased).max(initial=0) > HEAD_LIMIT:
            raise BudgetError(f"{layer.name}: head raw exceeds 32-bit range")
        return biased_chw, acc_frac, None, biased_chw
    div = scales.div
    # Prove the product fits the 48-bit carrier before multiplying, so the
    # int64 intermediate can never wrap.
    cap = PRODUCT_LIMIT // np.maximum(div, 1)
    if (np.abs(biased).max(axis=1) > cap).any():
        raise BudgetError(f"{layer.name}: post product exceeds 48-bit carrier")
    prod = biased * div[:, None]
    q = _round_shift_i64(prod, acc_frac + scales.div_fmt.frac_bits)
    q = np.clip(q, 0, ACT_MAX)
    q_chw = q.reshape(layer.out_channels, *h_w)
    nxt = maxpool2x2(q_chw) if layer.has_maxpool else q_chw
    return biased_chw, acc_frac, q_chw.astype(np.uint8), nxt


def forward_fixed_direct(
    model: ModelSpec, manifest: ParamManifest, image_u8: np.ndarray
) -> ForwardTrace:
    """Direct (non-streaming) fixed-point forward pass, bit-exact semantics."""
    image_u8 = np.asarray(image_u8)
    if tuple(image_u8.shape) != tuple(model.input_shape):
        raise ValueError(f"image shape {image_u8.shape} != {model.input_shape}")
    act = image_u8.astype(np.int64)
    act_frac = model.input_frac
    captures = []
    head = None
    head_frac = None
    for layer in model.layers:
        lp = manifest.params[layer.name]
        scales = layer_scales(layer, lp)
        biased, acc_frac, post, nxt = direct_layer_forward(layer, lp, scales, act, act_frac)
        captures.append(LayerCapture(layer.name, biased, acc_frac, post))
        if layer.has_post:
            act = nxt.astype(np.int64)
            act_frac = 0
        else:
            head = nxt
            head_frac = acc_frac
    return ForwardTrace(captures, head, head_frac)


def forward_float(
    model: ModelSpec, manifest: ParamManifest, image: np.ndarray
) -> ForwardTrace:
    """Floating-point mirror of the quantized graph.

    ``image`` is the real-valued input (C, H, W) in [0, 1]. Wire activations
    between layers are the integer activation codes, as in the fixed pipeline;
    captures expose the real conv outputs and the integer post codes.
    """
    image = np.asarray(image, dtype=np.float64)
    if tuple(image.shape) != tuple(model.input_shape):
        raise ValueError(f"image shape {image.shape} != {model.input_shape}")
    act = image
    captures = []
    head = None
    for layer in model.layers:
        lp = manifest.params[layer.name]
        if layer.conv_kind == CONV_W1A8:
            w_real = lp.weights.astype(np.float64)
            x = act * lp.mul[:, None, None]
        else:
            w_real = lp.weights.astype(np.float64) / layer.weight_fmt.scale
            x = act
        b_real = lp.bias.astype(np.float64) / layer.bias_fmt.scale
        y = conv2d_float(x, w_real, b_real, layer.padding)
        if not layer.has_post:
            captures.append(LayerCapture(layer.name, y, None, None))
            head = y
            continue
        q = _round_half_away_np(y * lp.div[:, None, None])
        q = np.clip(q, 0, ACT_MAX)
        captures.append(LayerCapture(layer.name, y, None, q.astype(np.uint8)))
        act = maxpool2x2(q) if layer.has_maxpool else q
    return ForwardTrace(captures, head, None)


def image_bytes_to_float(image_u8: np.ndarray) -> np.ndarray:
    """Software-side image normalization: byte p means p / 255."""
    return np.asarray(image_u8, dtype=np.float64) / 255.0


def post_activations_real(trace: ForwardTrace, manifest: ParamManifest) -> dict:
    """Per-layer post activations on the real grid (code times step size)."""
    out = {}
    for cap in trace.layers:
        if cap.post is None:
            continue
        step = manifest.params[cap.name].act_step
        out[cap.name] = cap.post.astype(np.float64) * step
    return out

"""Seeded random models, manifests, and images for tests and the CLI.

Channel rescales are calibrated against a seeded image so that activations
use a healthy slice of the 8-bit range instead of clipping to 0 or 255;
everything is a pure function of the seed, so fixtures regenerate
bit-identically.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .fixedpoint import Q1_15, Q2_14, Q4_12, Q5_11, QFormat
from .model_graph import (
    CONV_STANDARD,
    CONV_W1A8,
    LayerParams,
    LayerSpec,
    ModelSpec,
    ParamManifest,
)
from .reference_engine import direct_layer_forward, layer_scales

DEFAULT_SEED = 3

Q4_12U = QFormat(4, 12, signed=False)


def gen_image(shape, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=tuple(shape), dtype=np.uint8)


def _round_half_away_np(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def _fixed_raws(reals: np.ndarray, fmt, stored_bits: int) -> np.ndarray:
    """Vectorized real -> raw conversion, clipped to the stored width."""
    lo = max(fmt.raw_min, -(1 << (stored_bits - 1)))
    hi = min(fmt.raw_max, (1 << (stored_bits - 1)) - 1)
    raws = _round_half_away_np(np.asarray(reals, dtype=np.float64) * fmt.scale)
    return np.clip(raws, lo, hi).astype(np.int64)


def _std_weight_sigma(fmt) -> float:
    # Spread weights over a useful fraction of the storable range.
    return fmt.max_value / 4.0


def random_layer_params(rng: np.random.Generator, layer: LayerSpec) -> LayerParams:
    """Weights, biases, and mul scales; div is calibrated separately."""
    shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
    if layer.conv_kind == CONV_W1A8:
        weights = rng.choice(np.array([-1, 1], dtype=np.int8), size=shape)
        mul = rng.uniform(0.5, 2.0, size=layer.in_channels)
    else:
        sigma = _std_weight_sigma(layer.weight_fmt)
        reals = rng.normal(0.0, sigma, size=shape)
        limit = 0.98 * min(
            layer.weight_fmt.max_value,
            ((1 << (layer.stored_bits - 1)) - 1) / layer.weight_fmt.scale,
        )
        weights = _fixed_raws(np.clip(reals, -limit, limit), layer.weight_fmt, layer.stored_bits)
        mul = None
    blim = 0.9 * min(
        layer.bias_fmt.max_value,
        ((1 << (layer.stored_bits - 1)) - 1) / layer.bias_fmt.scale,
    )
    bias_reals = np.clip(rng.normal(0.0, blim / 4, size=layer.out_channels), -blim, blim)
    bias = _fixed_raws(bias_reals, layer.bias_fmt, layer.stored_bits)
    return LayerParams(weights=weights, bias=bias, mul=mul, div=None, act_step=None)


def gen_manifest(
    model: ModelSpec,
    seed: int = DEFAULT_SEED,
    calibration_image: Optional[np.ndarray] = None,
) -> ParamManifest:
    """Random parameters with data-calibrated per-channel rescales."""
    rng = np.random.default_rng(seed)
    if calibration_image is None:
        calibration_image = gen_image(model.input_shape, seed + 1)
    act = np.asarray(calibration_image).astype(np.int64)
    act_frac = model.input_frac
    params = {}
    for i, layer in enumerate(model.layers):
        lp = random_layer_params(rng, layer)
        if layer.has_post:
            div_fmt = layer.div_fmt
            # Probe the accumulator spread with a placeholder rescale, then
            # aim the per-channel quantized outputs at a useful spread: a
            # modest band early (keeps early-layer grids comparable), a
            # higher band deeper (keeps relative rounding noise small).
            probe = LayerParams(lp.weights, lp.bias, lp.mul,
                                np.full(layer.out_channels, 0.25), 1.0)
            scales = layer_scales(layer, probe)
            biased, acc_frac, _, _ = direct_layer_forward(layer, probe, scales, act, act_frac)
            spread = np.quantile(
                np.abs(biased.reshape(layer.out_channels, -1)).astype(np.float64),
                0.995, axis=1,
            ) / (1 << acc_frac)
            lo, hi = (48.0, 96.0) if i < 2 else (128.0, 200.0)
            target = rng.uniform(lo, hi, size=layer.out_channels)
            div = target / np.maximum(spread, 1e-6)
            div = np.clip(div, 2.0 ** -12, div_fmt.max_value * 0.98)
            lp.div = div
            lp.act_step = float(1.0 / np.mean(div))
            _, _, _, nxt = direct_layer_forward(
                layer, lp, layer_scales(layer, lp), act, act_frac
            )
            act = nxt.astype(np.int64)
            act_frac = 0
        params[layer.name] = lp
    return ParamManifest(model, params)


def gen_tiny_model(seed: int) -> ModelSpec:
    """Small mixed pipelines (8x8-ish inputs) for equivalence sweeps."""
    rng = np.random.default_rng(seed)
    in_ch = 3  # fixtures stay RGB so PPM round trips apply to every model
    h = w = 8
    chans = [in_ch] + [int(c) for c in rng.choice([2, 3, 4, 6, 8], size=3)]
    head_ch = int(rng.choice([3, 5, 7]))

    layers = []
    cur_h = h
    first_kind = CONV_STANDARD if rng.random() < 0.7 else CONV_W1A8
    n_mid = int(rng.integers(1, 3))
    pool_budget = 2  # keeps dims >= 2
    for i in range(1 + n_mid):
        kind = first_kind if i == 0 else CONV_W1A8
        kernel = 3 if (i == 0 or rng.random() < 0.6) else 1
        pool = bool(rng.random() < 0.5) and pool_budget > 0 and cur_h % 2 == 0
        if pool:
            pool_budget -= 1
        layers.append(
            LayerSpec(
                name=f"l{i}",
                conv_kind=kind,
                in_channels=chans[i],
                out_channels=chans[i + 1],
                kernel=kernel,
                has_post=True,
                has_maxpool=pool,
                weight_fmt=Q5_11 if kind == CONV_STANDARD else None,
                bias_fmt=Q2_14,
                mul_fmt=Q2_14 if kind == CONV_W1A8 else None,
                div_fmt=Q4_12U,
            )
        )
        if pool:
            cur_h //= 2
    layers.append(
        LayerSpec(
            name="head",
            conv_kind=CONV_STANDARD,
            in_channels=chans[1 + n_mid],
            out_channels=head_ch,
            kernel=1 if rng.random() < 0.5 else 3,
            has_post=False,
            has_maxpool=False,
            weight_fmt=Q1_15,
            bias_fmt=Q4_12,
        )
    )
    return ModelSpec((in_ch, h, w), tuple(layers))


def gen_tiny_manifest(seed: int):
    """(model, manifest, image) triple for one seeded tiny pipeline."""
    model = gen_tiny_model(seed)
    image = gen_image(model.input_shape, seed + 1)
    manifest = gen_manifest(model, seed, calibration_image=image)
    return model, manifest, image


def default_fixture(seed: int = DEFAULT_SEED):
    """The frozen full-size fixture: default model, seeded manifest, image."""
    from .model_graph import build_default_model

    model = build_default_model()
    image = gen_image(model.input_shape, seed + 1)
    manifest = gen_manifest(model, seed, calibration_image=image)
    return model, manifest, image

"""Parameter extraction: ONNX initializers -> neutral manifest directory.

The target architecture is the fixed 11-layer W1A8 detector; a YAML mapping
file associates its layers with graph tensor names (pattern defaults cover
conventionally named graphs). Weights and biases are converted to their
fixed-point raws, 1-bit weights to packed sign bits, and channel scales are
written as real float64 blobs with their target formats declared in the
header, matching the manifest contract of the inference toolchain.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import yaml

from .onnx_wire import load_model

MANIFEST_VERSION = 1

DEFAULT_PATTERNS = {
    "weights": "{layer}.weight",
    "bias": "{layer}.bias",
    "mul": "{layer}.mul_prev",
    "div": "{layer}.div_current",
    "step": "{layer}.act_step",
}

_FMT_RE = re.compile(r"^Q(\d+)\.(\d+)(u?)$")


def _frac_bits(fmt: str) -> int:
    return int(_FMT_RE.match(fmt).group(2))


def _raw_bounds(fmt: str, stored_bits: int):
    m = _FMT_RE.match(fmt)
    ib, fb, unsigned = int(m.group(1)), int(m.group(2)), m.group(3) == "u"
    lo = 0 if unsigned else -(1 << (ib + fb))
    hi = (1 << (ib + fb)) - 1
    slo, shi = -(1 << (stored_bits - 1)), (1 << (stored_bits - 1)) - 1
    return max(lo, slo), min(hi, shi)


def _layer(name, kind, cin, cout, kernel, pool, wfmt, bfmt, post=True):
    return {
        "name": name,
        "conv_kind": kind,
        "in_channels": cin,
        "out_channels": cout,
        "kernel": kernel,
        "padding": 1 if kernel == 3 else 0,
        "has_post": post,
        "has_maxpool": pool,
        "weight_format": wfmt,
        "bias_format": bfmt,
        "mul_format": "Q2.14" if kind == "w1a8" else None,
        "div_format": "Q0.16u" if post else None,
        "stored_bits": 16,
        "activation_out": "u8" if post else "raw",
    }


# The deployed 11-layer architecture this extractor targets.
ARCHITECTURE: List[dict] = [
    _layer("conv1", "standard", 3, 16, 3, True, "Q5.11", "Q2.14"),
    _layer("conv2", "w1a8", 16, 32, 3, True, None, "Q2.14"),
    _layer("conv3", "w1a8", 32, 64, 3, True, None, "Q2.14"),
    _layer("conv4", "w1a8", 64, 128, 3, True, None, "Q2.14"),
    _layer("conv5", "w1a8", 128, 128, 3, False, None, "Q2.14"),
    _layer("conv6", "w1a8", 128, 128, 3, False, None, "Q2.14"),
    _layer("conv7", "w1a8", 128, 128, 3, True, None, "Q2.14"),
    _layer("conv8", "w1a8", 128, 128, 3, False, None, "Q2.14"),
    _layer("conv9", "w1a8", 128, 64, 1, False, None, "Q2.14"),
    _layer("conv10", "w1a8", 64, 64, 3, False, None, "Q2.14"),
    _layer("conv11", "standard", 64, 75, 1, False, "Q1.15", "Q4.12", post=False),
]

INPUT_SHAPE = (3, 320, 320)


class ExportError(ValueError):
    """Unresolvable or inconsistent extraction input; message lists all issues."""


@dataclass
class LayerNames:
    weights: str
    bias: str
    mul: Optional[str]
    div: Optional[str]
    step: Optional[str]


def load_mapping(path: Optional[str]) -> Dict[str, dict]:
    """Per-layer tensor-name overrides from YAML; empty mapping is fine."""
    if path is None:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    layers = data.get("layers", data) or {}
    if not isinstance(layers, dict):
        raise ExportError("mapping file must hold a layer-name dictionary")
    return layers


def resolve_names(layer: dict, overrides: Dict[str, dict]) -> LayerNames:
    entry = overrides.get(layer["name"], {}) or {}

    def pick(role):
        return entry.get(role) or DEFAULT_PATTERNS[role].format(layer=layer["name"])

    is_bnn = layer["conv_kind"] == "w1a8"
    return LayerNames(
        weights=pick("weights"),
        bias=pick("bias"),
        mul=pick("mul") if is_bnn else None,
        div=pick("div") if layer["has_post"] else None,
        step=pick("step") if layer["has_post"] else None,
    )


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def _to_raws(reals: np.ndarray, fmt: str, stored_bits: int) -> np.ndarray:
    lo, hi = _raw_bounds(fmt, stored_bits)
    raws = _round_half_away(reals.astype(np.float64) * (1 << _frac_bits(fmt)))
    return np.clip(raws, lo, hi).astype(np.int64)


def _pack_signs(reals: np.ndarray) -> bytes:
    bits = (reals.ravel() >= 0).astype(np.uint8)  # sign(0) maps to +1
    return np.packbits(bits, bitorder="little").tobytes()


def export_manifest(onnx_path, out_dir, map_path=None) -> Path:
    """Extract all layers into a manifest directory; returns its path.

    Problems (missing tensors, wrong shapes, bad scales) are collected and
    reported together so one run surfaces the whole gap list.
    """
    model = load_model(onnx_path)
    tensors = model.graph.initializer_map()
    overrides = load_mapping(map_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    errors: List[str] = []
    resolved = {}

    def fetch(layer_name, role, tensor_name, shape=None):
        t = tensors.get(tensor_name)
        if t is None:
            errors.append(f"{layer_name}: {role} tensor {tensor_name!r} not in graph")
            return None
        arr = t.to_array().astype(np.float64)
        if shape is not None and tuple(arr.shape) != tuple(shape):
            errors.append(
                f"{layer_name}: {role} tensor {tensor_name!r} has shape "
                f"{tuple(arr.shape)}, expected {tuple(shape)}"
            )
            return None
        return arr

    for layer in ARCHITECTURE:
        names = resolve_names(layer, overrides)
        wshape = (layer["out_channels"], layer["in_channels"],
                  layer["kernel"], layer["kernel"])
        w = fetch(layer["name"], "weights", names.weights, wshape)
        b = fetch(layer["name"], "bias", names.bias, (layer["out_channels"],))
        mul = div = step = None
        if names.mul:
            mul = fetch(layer["name"], "mul_prev", names.mul, (layer["in_channels"],))
            if mul is not None and not (np.isfinite(mul).all() and (mul > 0).all()):
                errors.append(f"{layer['name']}: mul_prev must be finite and positive")
        if names.div:
            div = fetch(layer["name"], "div_current", names.div, (layer["out_channels"],))
            if div is not None and not (np.isfinite(div).all() and (div > 0).all()):
                errors.append(f"{layer['name']}: div_current must be finite and positive")
        if names.step:
            s = tensors.get(names.step)
            if s is None:
                errors.append(f"{layer['name']}: act_step tensor {names.step!r} not in graph")
            else:
                arr = s.to_array().reshape(-1)
                if arr.size != 1 or not (np.isfinite(arr[0]) and arr[0] > 0):
                    errors.append(f"{layer['name']}: act_step must be one positive scalar")
                else:
                    step = float(arr[0])
        resolved[layer["name"]] = (w, b, mul, div, step)

    if errors:
        raise ExportError("extraction failed:\n  " + "\n  ".join(errors))

    header = {
        "version": MANIFEST_VERSION,
        "endianness": "little",
        "model": {
            "input_shape": list(INPUT_SHAPE),
            "input_frac": 8,
            "layers": ARCHITECTURE,
        },
        "layers": {},
    }
    for layer in ARCHITECTURE:
        name = layer["name"]
        w, b, mul, div, step = resolved[name]
        entry = {"files": {}, "weight_order": "oc_ic_ky_kx", "bit_packing": "lsb_first"}
        if layer["conv_kind"] == "w1a8":
            blob = _pack_signs(w)
        else:
            blob = _to_raws(w, layer["weight_format"], layer["stored_bits"]) \
                .astype("<i2").tobytes()
        (out / f"{name}_w.bin").write_bytes(blob)
        entry["files"]["weights"] = f"{name}_w.bin"

        braws = _to_raws(b, layer["bias_format"], layer["stored_bits"])
        (out / f"{name}_b.bin").write_bytes(braws.astype("<i2").tobytes())
        entry["files"]["bias"] = f"{name}_b.bin"

        if mul is not None:
            (out / f"{name}_mul.bin").write_bytes(mul.astype("<f8").tobytes())
            entry["files"]["mul"] = f"{name}_mul.bin"
        if div is not None:
            (out / f"{name}_div.bin").write_bytes(div.astype("<f8").tobytes())
            entry["files"]["div"] = f"{name}_div.bin"
        if step is not None:
            entry["act_step"] = step
        header["layers"][name] = entry

    (out / "manifest.json").write_text(
        json.dumps(header, indent=2, sort_keys=True) + "\n"
    )
    return out

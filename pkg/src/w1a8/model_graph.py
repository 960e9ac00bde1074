"""Pipeline description, parameter manifests, and storage estimation.

The model is a fixed chain of convolution layers, each optionally followed
by post-processing (requantization to u8) and a 2x2 max-pool. Parameters
travel in a neutral on-disk manifest: one JSON header plus raw little-endian
blobs, bit-exact on round trips.

Manifest directory layout::

    manifest.json        header: shapes, formats, blob names, orderings
    <layer>_w.bin        weight raws (2's complement, little-endian) or,
                         for 1-bit layers, sign bits packed LSB-first
                         in [oc][ic][ky][kx] order (+1 -> 1, -1 -> 0)
    <layer>_b.bin        bias raws
    <layer>_mul.bin      per-input-channel scales, float64 little-endian
    <layer>_div.bin      per-output-channel scales, float64 little-endian
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .fixedpoint import Q0_16U, Q1_15, Q2_14, Q4_12, Q5_11, QFormat

CONV_STANDARD = "standard"
CONV_W1A8 = "w1a8"

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
WEIGHT_ORDER = "oc_ic_ky_kx"

_STORED_DTYPES = {8: "<i1", 16: "<i2", 32: "<i4"}


class ManifestError(ValueError):
    """Structural problem in a parameter manifest."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    conv_kind: str
    in_channels: int
    out_channels: int
    kernel: int
    has_post: bool
    has_maxpool: bool
    weight_fmt: Optional[QFormat]
    bias_fmt: QFormat
    mul_fmt: Optional[QFormat] = None
    div_fmt: Optional[QFormat] = None
    stored_bits: int = 16

    def __post_init__(self):
        if self.conv_kind not in (CONV_STANDARD, CONV_W1A8):
            raise ValueError(f"{self.name}: unknown conv kind {self.conv_kind!r}")
        if self.kernel not in (1, 3):
            raise ValueError(f"{self.name}: kernel must be 1x1 or 3x3")
        if self.conv_kind == CONV_W1A8 and self.weight_fmt is not None:
            raise ValueError(f"{self.name}: 1-bit layer carries no weight format")
        if self.conv_kind == CONV_STANDARD and self.weight_fmt is None:
            raise ValueError(f"{self.name}: standard layer needs a weight format")
        if self.conv_kind == CONV_W1A8 and self.mul_fmt is None:
            raise ValueError(f"{self.name}: w1a8 layer needs a mul_prev format")
        if self.conv_kind == CONV_STANDARD and self.mul_fmt is not None:
            raise ValueError(f"{self.name}: mul_prev fuses only into w1a8 layers")
        if self.has_post != (self.div_fmt is not None):
            raise ValueError(f"{self.name}: div_current present iff layer has post")
        if self.has_maxpool and not self.has_post:
            raise ValueError(f"{self.name}: max-pool follows only post layers")
        if self.stored_bits not in _STORED_DTYPES:
            raise ValueError(f"{self.name}: stored width must be 8, 16 or 32 bits")

    @property
    def padding(self) -> int:
        return 1 if self.kernel == 3 else 0

    @property
    def activation_out(self) -> str:
        return "u8" if self.has_post else "raw"

    @property
    def weight_count(self) -> int:
        return self.out_channels * self.in_channels * self.kernel * self.kernel


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple  # (C, H, W)
    layers: tuple
    input_frac: int = 8  # image bytes are Q0.8

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    def validate(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        c, h, w = self.input_shape
        for layer in self.layers:
            if layer.in_channels != c:
                raise ValueError(
                    f"{layer.name}: expects {layer.in_channels} input channels, gets {c}"
                )
            c = layer.out_channels
            if layer.has_maxpool:
                if h % 2 or w % 2:
                    raise ValueError(f"{layer.name}: max-pool needs even dims, got {h}x{w}")
                h, w = h // 2, w // 2
        for layer in self.layers[:-1]:
            if not layer.has_post:
                raise ValueError(f"{layer.name}: only the final layer may emit raw values")
        if self.layers[-1].has_post:
            raise ValueError("final layer must emit the raw head")

    def spatial_sizes(self):
        """(h, w) seen at the input of each layer, in layer order."""
        _, h, w = self.input_shape
        sizes = []
        for layer in self.layers:
            sizes.append((h, w))
            if layer.has_maxpool:
                h, w = h // 2, w // 2
        return sizes

    @property
    def output_shape(self) -> tuple:
        (h, w) = self.spatial_sizes()[-1]
        last = self.layers[-1]
        if last.has_maxpool:
            h, w = h // 2, w // 2
        return (last.out_channels, h, w)

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


def build_default_model() -> ModelSpec:
    """The 11-conv W1A8 detector: 320x320x3 in, 75x10x10 raw head out."""

    def std(name, cin, cout, k, pool, wfmt, bfmt, post=True):
        return LayerSpec(
            name, CONV_STANDARD, cin, cout, k,
            has_post=post, has_maxpool=pool,
            weight_fmt=wfmt, bias_fmt=bfmt,
            div_fmt=Q0_16U if post else None,
        )

    def bnn(name, cin, cout, k, pool):
        return LayerSpec(
            name, CONV_W1A8, cin, cout, k,
            has_post=True, has_maxpool=pool,
            weight_fmt=None, bias_fmt=Q2_14,
            mul_fmt=Q2_14, div_fmt=Q0_16U,
        )

    layers = (
        std("conv1", 3, 16, 3, True, Q5_11, Q2_14),
        bnn("conv2", 16, 32, 3, True),
        bnn("conv3", 32, 64, 3, True),
        bnn("conv4", 64, 128, 3, True),
        bnn("conv5", 128, 128, 3, False),
        bnn("conv6", 128, 128, 3, False),
        bnn("conv7", 128, 128, 3, True),
        bnn("conv8", 128, 128, 3, False),
        bnn("conv9", 128, 64, 1, False),
        bnn("conv10", 64, 64, 3, False),
        std("conv11", 64, 75, 1, False, Q1_15, Q4_12, post=False),
    )
    return ModelSpec((3, 320, 320), layers)


# ---------------------------------------------------------------------------
# Storage estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StorageRow:
    index: str
    name: str
    kind: str  # "conv" | "maxpool"
    in_shape: tuple
    out_shape: tuple
    height: int
    width: int
    line_buffer_bytes: int
    line_buffer_expr: str
    weight_bytes: int


@dataclass(frozen=True)
class StorageReport:
    rows: tuple
    param_count: int

    @property
    def total_line_buffer_bytes(self) -> int:
        return sum(r.line_buffer_bytes for r in self.rows)

    @property
    def total_weight_bytes(self) -> int:
        return sum(r.weight_bytes for r in self.rows)

    def format_table(self) -> str:
        lines = [
            f"{'Layer':<6} {'Type':<10} {'In->Out':<28} {'HxW':<9} "
            f"{'Line buffer':<22} {'Weights':>9}"
        ]
        for r in self.rows:
            io = f"{list(r.in_shape)} -> {list(r.out_shape)}"
            lb = f"{r.line_buffer_expr} = {_kb(r.line_buffer_bytes)}"
            lines.append(
                f"{r.index:<6} {r.kind:<10} {io:<28} {r.height}x{r.width:<6} "
                f"{lb:<22} {_kb(r.weight_bytes):>9}"
            )
        lines.append(
            f"totals: line buffers {_kb(self.total_line_buffer_bytes)}, "
            f"raw packed weights {_kb(self.total_weight_bytes)}, "
            f"{self.param_count} parameters"
        )
        lines.append(
            "note: weight column is raw packed bytes; ROM packing and "
            "memory-depth alignment add real-device overhead on top"
        )
        return "\n".join(lines)


def _kb(n: int) -> str:
    return f"{n / 1024:.1f}KB" if n >= 1024 else f"{n}B"


def estimate_storage(model: ModelSpec) -> StorageReport:
    """Per-layer line-buffer and raw weight byte estimates.

    Conv rows budget two activation rows (2 * width * out_channels bytes);
    max-pool rows budget three (3 * out_width * channels bytes). Weight
    bytes are the packed ROM payload: ceil(K*K*Cin*Cout / 8) for 1-bit
    layers, width-scaled raws plus biases for fixed-point layers.
    """
    rows = []
    params = 0
    c, h, w = model.input_shape
    idx = 0
    for layer in model.layers:
        out_c = layer.out_channels
        if layer.conv_kind == CONV_W1A8:
            wbytes = -(-layer.weight_count // 8)  # ceil div
        else:
            per = layer.stored_bits // 8
            wbytes = per * layer.weight_count + per * out_c
        params += layer.weight_count + out_c
        rows.append(
            StorageRow(
                index=f"L{idx}",
                name=layer.name,
                kind="conv",
                in_shape=(c, h, w),
                out_shape=(out_c, h, w),
                height=h,
                width=w,
                line_buffer_bytes=2 * w * out_c,
                line_buffer_expr=f"2x{w}x{out_c}",
                weight_bytes=wbytes,
            )
        )
        idx += 1
        c = out_c
        if layer.has_maxpool:
            oh, ow = h // 2, w // 2
            rows.append(
                StorageRow(
                    index=f"L{idx}",
                    name=f"{layer.name}_pool",
                    kind="maxpool",
                    in_shape=(c, h, w),
                    out_shape=(c, oh, ow),
                    height=oh,
                    width=ow,
                    line_buffer_bytes=3 * ow * c,
                    line_buffer_expr=f"3x{ow}x{c}",
                    weight_bytes=0,
                )
            )
            idx += 1
            h, w = oh, ow
    return StorageReport(tuple(rows), params)


# ---------------------------------------------------------------------------
# Parameter manifest
# ---------------------------------------------------------------------------

@dataclass
class LayerParams:
    """Raw parameters for one layer.

    ``weights`` holds int64 fixed-point raws for standard layers or int8
    signs (+1/-1) for 1-bit layers, always [oc][ic][ky][kx]. Channel scales
    stay real here; engines convert them via their declared formats.
    """

    weights: np.ndarray
    bias: np.ndarray
    mul: Optional[np.ndarray] = None
    div: Optional[np.ndarray] = None
    act_step: Optional[float] = None


@dataclass
class ParamManifest:
    model: ModelSpec
    params: dict = field(default_factory=dict)  # name -> LayerParams
    version: int = MANIFEST_VERSION

    def layer_params(self, name: str) -> LayerParams:
        return self.params[name]


def _fmt_str(fmt: Optional[QFormat]) -> Optional[str]:
    return None if fmt is None else str(fmt)


def _layer_to_dict(layer: LayerSpec) -> dict:
    return {
        "name": layer.name,
        "conv_kind": layer.conv_kind,
        "in_channels": layer.in_channels,
        "out_channels": layer.out_channels,
        "kernel": layer.kernel,
        "padding": layer.padding,
        "has_post": layer.has_post,
        "has_maxpool": layer.has_maxpool,
        "weight_format": _fmt_str(layer.weight_fmt),
        "bias_format": _fmt_str(layer.bias_fmt),
        "mul_format": _fmt_str(layer.mul_fmt),
        "div_format": _fmt_str(layer.div_fmt),
        "stored_bits": layer.stored_bits,
        "activation_out": layer.activation_out,
    }


def _parse_fmt(text, layer_name: str, field_name: str) -> Optional[QFormat]:
    if text is None:
        return None
    try:
        return QFormat.parse(text)
    except ValueError as e:
        raise ManifestError(f"{layer_name}: {field_name}: {e}") from e


def _layer_from_dict(d: dict) -> LayerSpec:
    name = d.get("name", "<unnamed>")
    try:
        return LayerSpec(
            name=d["name"],
            conv_kind=d["conv_kind"],
            in_channels=int(d["in_channels"]),
            out_channels=int(d["out_channels"]),
            kernel=int(d["kernel"]),
            has_post=bool(d["has_post"]),
            has_maxpool=bool(d["has_maxpool"]),
            weight_fmt=_parse_fmt(d.get("weight_format"), name, "weight_format"),
            bias_fmt=_parse_fmt(d["bias_format"], name, "bias_format"),
            mul_fmt=_parse_fmt(d.get("mul_format"), name, "mul_format"),
            div_fmt=_parse_fmt(d.get("div_format"), name, "div_format"),
            stored_bits=int(d.get("stored_bits", 16)),
        )
    except KeyError as e:
        raise ManifestError(f"{name}: missing layer field {e.args[0]!r}") from e


def model_to_dict(model: ModelSpec) -> dict:
    return {
        "input_shape": list(model.input_shape),
        "input_frac": model.input_frac,
        "layers": [_layer_to_dict(l) for l in model.layers],
    }


def model_from_dict(d: dict) -> ModelSpec:
    try:
        return ModelSpec(
            tuple(d["input_shape"]),
            tuple(_layer_from_dict(ld) for ld in d["layers"]),
            input_frac=int(d.get("input_frac", 8)),
        )
    except KeyError as e:
        raise ManifestError(f"model header missing field {e.args[0]!r}") from e


def _pack_signs(signs: np.ndarray) -> bytes:
    bits = (np.asarray(signs).ravel() > 0).astype(np.uint8)
    return np.packbits(bits, bitorder="little").tobytes()


def _unpack_signs(blob: bytes, shape) -> np.ndarray:
    count = int(np.prod(shape))
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), bitorder="little")[:count]
    return np.where(bits > 0, 1, -1).astype(np.int8).reshape(shape)


def _check_stored(raws: np.ndarray, bits: int, where: str):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if raws.min(initial=0) < lo or raws.max(initial=0) > hi:
        raise ManifestError(f"{where}: raw value outside {bits}-bit stored width")


def save_manifest(manifest: ParamManifest, path) -> None:
    """Write the manifest directory; byte-deterministic for equal inputs."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = {
        "version": manifest.version,
        "endianness": "little",
        "model": model_to_dict(manifest.model),
        "layers": {},
    }
    for layer in manifest.model.layers:
        lp = manifest.params.get(layer.name)
        if lp is None:
            raise ManifestError(f"{layer.name}: parameters missing from manifest")
        shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
        if tuple(lp.weights.shape) != shape:
            raise ManifestError(
                f"{layer.name}: weights: shape {lp.weights.shape} != {shape}"
            )
        entry = {"files": {}}
        dtype = _STORED_DTYPES[layer.stored_bits]
        if layer.conv_kind == CONV_W1A8:
            blob = _pack_signs(lp.weights)
        else:
            raws = np.asarray(lp.weights, dtype=np.int64)
            _check_stored(raws, layer.stored_bits, f"{layer.name}: weights")
            blob = raws.astype(dtype).tobytes()
        (path / f"{layer.name}_w.bin").write_bytes(blob)
        entry["files"]["weights"] = f"{layer.name}_w.bin"

        bias = np.asarray(lp.bias, dtype=np.int64)
        if bias.shape != (layer.out_channels,):
            raise ManifestError(f"{layer.name}: bias: length {bias.size} != {layer.out_channels}")
        _check_stored(bias, layer.stored_bits, f"{layer.name}: bias")
        (path / f"{layer.name}_b.bin").write_bytes(bias.astype(dtype).tobytes())
        entry["files"]["bias"] = f"{layer.name}_b.bin"

        if (lp.mul is not None) != (layer.conv_kind == CONV_W1A8):
            raise ManifestError(f"{layer.name}: mul_prev present iff layer is w1a8")
        if lp.mul is not None:
            mul = np.asarray(lp.mul, dtype=np.float64)
            if mul.shape != (layer.in_channels,):
                raise ManifestError(
                    f"{layer.name}: mul_prev: length {mul.size} != {layer.in_channels}"
                )
            (path / f"{layer.name}_mul.bin").write_bytes(mul.astype("<f8").tobytes())
            entry["files"]["mul"] = f"{layer.name}_mul.bin"

        if (lp.div is not None) != layer.has_post:
            raise ManifestError(f"{layer.name}: div_current present iff layer has post")
        if lp.div is not None:
            div = np.asarray(lp.div, dtype=np.float64)
            if div.shape != (layer.out_channels,):
                raise ManifestError(
                    f"{layer.name}: div_current: length {div.size} != {layer.out_channels}"
                )
            (path / f"{layer.name}_div.bin").write_bytes(div.astype("<f8").tobytes())
            entry["files"]["div"] = f"{layer.name}_div.bin"

        if (lp.act_step is not None) != layer.has_post:
            raise ManifestError(f"{layer.name}: act_step present iff layer has post")
        if lp.act_step is not None:
            if not (np.isfinite(lp.act_step) and lp.act_step > 0):
                raise ManifestError(f"{layer.name}: act_step must be finite and positive")
            entry["act_step"] = float(lp.act_step)
        entry["weight_order"] = WEIGHT_ORDER
        entry["bit_packing"] = "lsb_first"
        header["layers"][layer.name] = entry
    text = json.dumps(header, indent=2, sort_keys=True) + "\n"
    (path / MANIFEST_NAME).write_text(text)


def _read_blob(path: Path, layer: str, field_name: str, filename: str) -> bytes:
    blob_path = path / filename
    if not blob_path.is_file():
        raise ManifestError(f"{layer}: {field_name}: blob {filename} missing")
    return blob_path.read_bytes()


def load_manifest(path) -> ParamManifest:
    """Load and fully validate a manifest directory."""
    path = Path(path)
    header_path = path / MANIFEST_NAME
    if not header_path.is_file():
        raise ManifestError(f"no {MANIFEST_NAME} in {path}")
    header = json.loads(header_path.read_text())
    version = header.get("version")
    if version != MANIFEST_VERSION:
        raise ManifestError(
            f"manifest version {version} unsupported (expected {MANIFEST_VERSION})"
        )
    if header.get("endianness", "little") != "little":
        raise ManifestError("manifest endianness must be little")
    model_desc = header.get("model")
    if model_desc == "default" or model_desc is None:
        model = build_default_model()
    else:
        model = model_from_dict(model_desc)
    entries = header.get("layers", {})
    params = {}
    for layer in model.layers:
        entry = entries.get(layer.name)
        if entry is None:
            raise ManifestError(f"{layer.name}: missing from manifest header")
        files = entry.get("files", {})
        shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
        dtype = _STORED_DTYPES[layer.stored_bits]

        wblob = _read_blob(path, layer.name, "weights", files.get("weights", f"{layer.name}_w.bin"))
        if layer.conv_kind == CONV_W1A8:
            expect = -(-layer.weight_count // 8)
            if len(wblob) != expect:
                raise ManifestError(
                    f"{layer.name}: weights: blob is {len(wblob)} bytes, expected {expect}"
                )
            weights = _unpack_signs(wblob, shape)
        else:
            expect = layer.weight_count * layer.stored_bits // 8
            if len(wblob) != expect:
                raise ManifestError(
                    f"{layer.name}: weights: blob is {len(wblob)} bytes, expected {expect}"
                )
            weights = np.frombuffer(wblob, dtype=dtype).astype(np.int64).reshape(shape)

        bblob = _read_blob(path, layer.name, "bias", files.get("bias", f"{layer.name}_b.bin"))
        expect = layer.out_channels * layer.stored_bits // 8
        if len(bblob) != expect:
            raise ManifestError(
                f"{layer.name}: bias: blob is {len(bblob)} bytes, expected {expect}"
            )
        bias = np.frombuffer(bblob, dtype=dtype).astype(np.int64)

        mul = div = None
        if layer.conv_kind == CONV_W1A8:
            mblob = _read_blob(path, layer.name, "mul_prev", files.get("mul", f"{layer.name}_mul.bin"))
            if len(mblob) != 8 * layer.in_channels:
                raise ManifestError(
                    f"{layer.name}: mul_prev: blob is {len(mblob)} bytes, "
                    f"expected {8 * layer.in_channels}"
                )
            mul = np.frombuffer(mblob, dtype="<f8").astype(np.float64)
            if not (np.isfinite(mul).all() and (mul > 0).all()):
                raise ManifestError(f"{layer.name}: mul_prev: scales must be finite and positive")
        act_step = None
        if layer.has_post:
            dblob = _read_blob(path, layer.name, "div_current", files.get("div", f"{layer.name}_div.bin"))
            if len(dblob) != 8 * layer.out_channels:
                raise ManifestError(
                    f"{layer.name}: div_current: blob is {len(dblob)} bytes, "
                    f"expected {8 * layer.out_channels}"
                )
            div = np.frombuffer(dblob, dtype="<f8").astype(np.float64)
            if not (np.isfinite(div).all() and (div > 0).all()):
                raise ManifestError(f"{layer.name}: div_current: scales must be finite and positive")
            act_step = entry.get("act_step")
            if act_step is None:
                raise ManifestError(f"{layer.name}: act_step missing")
            act_step = float(act_step)
            if not (np.isfinite(act_step) and act_step > 0):
                raise ManifestError(f"{layer.name}: act_step must be finite and positive")
        params[layer.name] = LayerParams(weights, bias, mul, div, act_step)
    return ParamManifest(model, params, version=version)

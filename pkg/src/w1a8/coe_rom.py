"""ROM word packing and Vivado COE emission/parsing.

The canonical ROM address order is [oc][ic][ky][kx], row-major. 1-bit
weights map +1 -> 1 and -1 -> 0 and are packed LSB-first within each word;
fixed-point parameters occupy one two's-complement word each. COE output is
byte-deterministic: lowercase hex (or binary), one word per line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model_graph import CONV_W1A8, LayerSpec

WORD_WIDTHS = (8, 16, 32)


class CoeParseError(ValueError):
    """Malformed COE text; message carries the offending line number."""


@dataclass(frozen=True)
class RomImage:
    word_width: int
    words: tuple
    radix: int = 16

    def __post_init__(self):
        if self.radix not in (2, 16):
            raise ValueError(f"radix must be 2 or 16, not {self.radix}")
        object.__setattr__(self, "words", tuple(int(w) for w in self.words))
        limit = 1 << self.word_width
        for i, w in enumerate(self.words):
            if not 0 <= w < limit:
                raise ValueError(f"word {i} value {w:#x} exceeds width {self.word_width}")

    @property
    def depth(self) -> int:
        return len(self.words)


@dataclass(frozen=True)
class AddressMap:
    """Bijection between (oc, ic, ky, kx) and bit offsets in the ROM stream."""

    layer_name: str
    shape: tuple  # (oc, ic, kh, kw)
    bits_per_entry: int
    word_width: int

    def linear_index(self, oc: int, ic: int, ky: int, kx: int) -> int:
        o, i, kh, kw = self.shape
        if not (0 <= oc < o and 0 <= ic < i and 0 <= ky < kh and 0 <= kx < kw):
            raise IndexError("coordinate outside layer shape")
        return ((oc * i + ic) * kh + ky) * kw + kx

    def bit_offset(self, oc: int, ic: int, ky: int, kx: int) -> int:
        return self.linear_index(oc, ic, ky, kx) * self.bits_per_entry

    @property
    def entry_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def total_bits(self) -> int:
        return self.entry_count * self.bits_per_entry

    @property
    def depth(self) -> int:
        return -(-self.total_bits // self.word_width)


def address_map(layer: LayerSpec, word_width: int = 16) -> AddressMap:
    # 1-bit weights pack densely; fixed-point raws take one word slot each
    bits = 1 if layer.conv_kind == CONV_W1A8 else word_width
    shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
    return AddressMap(layer.name, shape, bits, word_width)


def _bits_to_words(bits: np.ndarray, word_width: int) -> tuple:
    pad = (-len(bits)) % word_width
    if pad:
        bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    weights = (1 << np.arange(word_width, dtype=np.int64))
    grouped = bits.reshape(-1, word_width).astype(np.int64)
    return tuple(int(w) for w in (grouped * weights).sum(axis=1))


def pack_weights(layer: LayerSpec, weights: np.ndarray, word_width: int = 16) -> RomImage:
    """Pack one layer's weights into ROM words in canonical address order."""
    if word_width not in WORD_WIDTHS:
        raise ValueError(f"word width must be one of {WORD_WIDTHS}")
    weights = np.asarray(weights)
    shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
    if tuple(weights.shape) != shape:
        raise ValueError(f"{layer.name}: weights shape {weights.shape} != {shape}")
    if layer.conv_kind == CONV_W1A8:
        bits = (weights.ravel() > 0).astype(np.uint8)
        return RomImage(word_width, _bits_to_words(bits, word_width))
    raws = weights.astype(np.int64).ravel()
    return RomImage(word_width, pack_values(raws, word_width).words)


def pack_values(raws, word_width: int = 16, signed: bool = True) -> RomImage:
    """One raw per word slot; two's complement for signed raws."""
    if word_width not in WORD_WIDTHS:
        raise ValueError(f"word width must be one of {WORD_WIDTHS}")
    raws = np.asarray(raws, dtype=np.int64).ravel()
    if signed:
        lo, hi = -(1 << (word_width - 1)), (1 << (word_width - 1)) - 1
    else:
        lo, hi = 0, (1 << word_width) - 1
    if raws.size and (raws.min() < lo or raws.max() > hi):
        raise ValueError(f"raw value outside {word_width}-bit word range")
    mask = (1 << word_width) - 1
    return RomImage(word_width, tuple(int(r) & mask for r in raws))


def unpack_weights(layer: LayerSpec, img: RomImage) -> np.ndarray:
    """Inverse of pack_weights through the canonical address map."""
    amap = address_map(layer, img.word_width)
    shape = amap.shape
    if img.depth != amap.depth:
        raise ValueError(f"{layer.name}: image depth {img.depth} != expected {amap.depth}")
    if layer.conv_kind == CONV_W1A8:
        words = np.array(img.words, dtype=np.int64)
        bits = (words[:, None] >> np.arange(img.word_width)) & 1
        bits = bits.ravel()[: amap.entry_count]
        return np.where(bits > 0, 1, -1).astype(np.int8).reshape(shape)
    half = 1 << (img.word_width - 1)
    raws = np.array(img.words, dtype=np.int64)
    raws = np.where(raws >= half, raws - (1 << img.word_width), raws)
    return raws.reshape(shape)


def emit_coe(img: RomImage) -> str:
    """Render the exact COE grammar; identical images give identical bytes."""
    if img.radix == 16:
        digits = -(-img.word_width // 4)
        body = [f"{w:0{digits}x}" for w in img.words]
    else:
        body = [f"{w:0{img.word_width}b}" for w in img.words]
    lines = [f"memory_initialization_radix={img.radix};", "memory_initialization_vector="]
    if not body:
        lines.append(";")
    else:
        lines.extend(f"{w}," for w in body[:-1])
        lines.append(f"{body[-1]};")
    return "\n".join(lines) + "\n"


def parse_coe(text: str, word_width: int) -> RomImage:
    """Parse COE text back into a RomImage.

    Whitespace is free; lines starting with ';' outside the vector are
    comments. Inside the vector, ';' terminates the word list.
    """
    radix: Optional[int] = None
    words = []
    state = "header"  # header -> vector -> done
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if state != "vector" and line.startswith(";"):
            continue  # comment outside the vector
        if state == "header":
            compact = line.replace(" ", "").lower()
            if compact.startswith("memory_initialization_radix="):
                value = compact.split("=", 1)[1].rstrip(";")
                try:
                    radix = int(value)
                except ValueError:
                    raise CoeParseError(f"line {lineno}: malformed radix {value!r}") from None
                if radix not in (2, 16):
                    raise CoeParseError(f"line {lineno}: malformed radix {radix}")
                continue
            if compact.startswith("memory_initialization_vector="):
                if radix is None:
                    raise CoeParseError(f"line {lineno}: vector before radix")
                state = "vector"
                line = line.split("=", 1)[1].strip()
                if not line:
                    continue
            else:
                raise CoeParseError(f"line {lineno}: unexpected text {line!r}")
        if state == "done":
            raise CoeParseError(f"line {lineno}: data after terminator")
        for token in line.replace(",", " ").replace(";", " ; ").split():
            if state == "done":
                raise CoeParseError(f"line {lineno}: data after terminator")
            if token == ";":
                state = "done"
                continue
            try:
                value = int(token, radix)
            except ValueError:
                raise CoeParseError(f"line {lineno}: bad word {token!r}") from None
            if value >= (1 << word_width):
                raise CoeParseError(
                    f"line {lineno}: word {token!r} exceeds width {word_width}"
                )
            words.append(value)
    if state == "header":
        raise CoeParseError("no memory_initialization_vector found")
    if state == "vector":
        raise CoeParseError("missing ';' terminator at end of vector")
    return RomImage(word_width, tuple(words), radix=radix)


@dataclass(frozen=True)
class RomReadSchedule:
    """Timing contract of a synchronous ROM read port.

    A word addressed at cycle t is usable at cycle t + read_latency;
    back-to-back addresses pipeline at one result per cycle after the
    initial fill.
    """

    read_latency: int

    def __post_init__(self):
        if self.read_latency < 1:
            raise ValueError("read latency is at least one cycle")

    def data_ready_cycle(self, issue_cycle: int) -> int:
        return issue_cycle + self.read_latency

    def stream_ready_cycle(self, first_issue_cycle: int, n: int) -> int:
        """Cycle at which the n-th (0-based) of a back-to-back burst lands."""
        return first_issue_cycle + self.read_latency + n


def rom_latency_model(read_latency: int) -> RomReadSchedule:
    return RomReadSchedule(read_latency)

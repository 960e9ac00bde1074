"""Binary PPM (P6) image I/O; the only image format the toolchain speaks."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PpmError(ValueError):
    pass


def _tokens(data: bytes):
    """Header tokens of a PPM file, skipping '#' comments."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i:i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < n and data[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace():
                j += 1
            yield data[i:j], j
            i = j


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into a (3, H, W) uint8 array."""
    data = Path(path).read_bytes()
    toks = _tokens(data)
    try:
        magic, _ = next(toks)
        if magic != b"P6":
            raise PpmError(f"{path}: not a binary PPM (magic {magic!r})")
        width, _ = next(toks)
        height, _ = next(toks)
        maxval, end = next(toks)
    except StopIteration:
        raise PpmError(f"{path}: truncated PPM header") from None
    w, h, mv = int(width), int(height), int(maxval)
    if mv != 255:
        raise PpmError(f"{path}: maxval must be 255, got {mv}")
    start = end + 1  # single whitespace byte after maxval
    pixels = data[start:start + 3 * w * h]
    if len(pixels) != 3 * w * h:
        raise PpmError(f"{path}: expected {3 * w * h} pixel bytes, got {len(pixels)}")
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) uint8 array as binary P6."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[0] != 3:
        raise PpmError(f"image must be (3, H, W), got {image.shape}")
    _, h, w = image.shape
    header = f"P6\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + image.transpose(1, 2, 0).tobytes())

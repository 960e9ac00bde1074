"""Golden tensor dump format: flat little-endian binary plus JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPES = {"u1": "|u1", "i4": "<i4", "i8": "<i8", "f8": "<f8"}


def _code_for(arr: np.ndarray) -> str:
    if arr.dtype == np.uint8:
        return "u1"
    if arr.dtype == np.int32:
        return "i4"
    if np.issubdtype(arr.dtype, np.integer):
        return "i8"
    return "f8"


def save_tensor(directory, name: str, arr: np.ndarray, frac_bits=None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    code = _code_for(np.asarray(arr))
    data = np.ascontiguousarray(np.asarray(arr), dtype=_DTYPES[code])
    (directory / f"{name}.bin").write_bytes(data.tobytes())
    meta = {"shape": list(np.asarray(arr).shape), "dtype": code}
    if frac_bits is not None:
        meta["frac_bits"] = int(frac_bits)
    (directory / f"{name}.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n"
    )


def load_tensor(directory, name: str):
    directory = Path(directory)
    meta = json.loads((directory / f"{name}.json").read_text())
    blob = (directory / f"{name}.bin").read_bytes()
    arr = np.frombuffer(blob, dtype=_DTYPES[meta["dtype"]]).reshape(meta["shape"])
    return arr, meta


def save_head_words(path, words) -> None:
    """Raw head dump: little-endian signed 32-bit words in y/x/channel order."""
    np.asarray(words, dtype="<i4").tofile(str(path))


def load_head_words(path) -> np.ndarray:
    return np.fromfile(str(path), dtype="<i4").astype(np.int64)

"""Minimal ONNX protobuf wire codec.

Covers the slice of the format parameter extraction needs: the model/graph
shell, node names, and initializer tensors carrying raw or typed data.
Field numbers come from the public onnx.proto and are stable across ONNX
releases; unknown fields are skipped on read, so real exported models parse
even though only this subset is understood.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

# TensorProto.DataType values
FLOAT = 1
INT32 = 6
INT64 = 7
DOUBLE = 11

_DTYPES = {FLOAT: "<f4", INT32: "<i4", INT64: "<i8", DOUBLE: "<f8"}
_CODES = {np.dtype(np.float32): FLOAT, np.dtype(np.int32): INT32,
          np.dtype(np.int64): INT64, np.dtype(np.float64): DOUBLE}

# wire types
_VARINT, _I64, _LEN, _I32 = 0, 1, 2, 5


class OnnxWireError(ValueError):
    pass


def _write_varint(buf: bytearray, value: int) -> None:
    if value < 0:
        value &= (1 << 64) - 1
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.append(byte | 0x80)
        else:
            buf.append(byte)
            return


def _read_varint(data: bytes, i: int) -> Tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if i >= len(data):
            raise OnnxWireError("truncated varint")
        byte = data[i]
        i += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, i
        shift += 7
        if shift > 70:
            raise OnnxWireError("varint too long")


def _write_tag(buf: bytearray, field_no: int, wtype: int) -> None:
    _write_varint(buf, (field_no << 3) | wtype)


def _write_len(buf: bytearray, field_no: int, payload: bytes) -> None:
    _write_tag(buf, field_no, _LEN)
    _write_varint(buf, len(payload))
    buf.extend(payload)


def _write_str(buf: bytearray, field_no: int, text: str) -> None:
    _write_len(buf, field_no, text.encode("utf-8"))


def _scan(data: bytes):
    i = 0
    n = len(data)
    while i < n:
        tag, i = _read_varint(data, i)
        field_no, wtype = tag >> 3, tag & 7
        if wtype == _VARINT:
            value, i = _read_varint(data, i)
        elif wtype == _LEN:
            ln, i = _read_varint(data, i)
            if i + ln > n:
                raise OnnxWireError("truncated length-delimited field")
            value = data[i:i + ln]
            i += ln
        elif wtype == _I64:
            value = data[i:i + 8]
            i += 8
        elif wtype == _I32:
            value = data[i:i + 4]
            i += 4
        else:
            raise OnnxWireError(f"unsupported wire type {wtype}")
        yield field_no, wtype, value


@dataclass
class Tensor:
    """An initializer: name, dims, element type, little-endian payload."""

    name: str
    dims: Tuple[int, ...]
    data_type: int
    raw: bytes

    def to_array(self) -> np.ndarray:
        dtype = _DTYPES.get(self.data_type)
        if dtype is None:
            raise OnnxWireError(f"{self.name}: unsupported data type {self.data_type}")
        return np.frombuffer(self.raw, dtype=dtype).reshape(self.dims)

    @classmethod
    def from_array(cls, name: str, arr: np.ndarray) -> "Tensor":
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise OnnxWireError(f"{name}: unsupported array dtype {arr.dtype}")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        return cls(name, tuple(arr.shape), code, data.tobytes())


@dataclass
class Node:
    op_type: str
    name: str = ""
    inputs: Tuple[str, ...] = ()
    outputs: Tuple[str, ...] = ()


@dataclass
class Graph:
    name: str = "graph"
    nodes: List[Node] = field(default_factory=list)
    initializers: List[Tensor] = field(default_factory=list)
    input_names: Tuple[str, ...] = ()
    output_names: Tuple[str, ...] = ()

    def initializer_map(self) -> dict:
        return {t.name: t for t in self.initializers}


@dataclass
class Model:
    graph: Graph
    ir_version: int = 8
    producer: str = "onnx2manifest"
    opset_version: int = 13


# --- encoding ---------------------------------------------------------------

def _encode_tensor(t: Tensor) -> bytes:
    buf = bytearray()
    for d in t.dims:
        _write_tag(buf, 1, _VARINT)
        _write_varint(buf, d)
    _write_tag(buf, 2, _VARINT)
    _write_varint(buf, t.data_type)
    _write_str(buf, 8, t.name)
    _write_len(buf, 9, t.raw)
    return bytes(buf)


def _encode_node(n: Node) -> bytes:
    buf = bytearray()
    for name in n.inputs:
        _write_str(buf, 1, name)
    for name in n.outputs:
        _write_str(buf, 2, name)
    if n.name:
        _write_str(buf, 3, n.name)
    _write_str(buf, 4, n.op_type)
    return bytes(buf)


def _encode_value_info(name: str) -> bytes:
    buf = bytearray()
    _write_str(buf, 1, name)
    return bytes(buf)


def _encode_graph(g: Graph) -> bytes:
    buf = bytearray()
    for node in g.nodes:
        _write_len(buf, 1, _encode_node(node))
    _write_str(buf, 2, g.name)
    for tensor in g.initializers:
        _write_len(buf, 5, _encode_tensor(tensor))
    for name in g.input_names:
        _write_len(buf, 11, _encode_value_info(name))
    for name in g.output_names:
        _write_len(buf, 12, _encode_value_info(name))
    return bytes(buf)


def encode_model(m: Model) -> bytes:
    buf = bytearray()
    _write_tag(buf, 1, _VARINT)
    _write_varint(buf, m.ir_version)
    _write_str(buf, 2, m.producer)
    _write_len(buf, 7, _encode_graph(m.graph))
    opset = bytearray()
    _write_str(opset, 1, "")
    _write_tag(opset, 2, _VARINT)
    _write_varint(opset, m.opset_version)
    _write_len(buf, 8, bytes(opset))
    return bytes(buf)


# --- decoding ---------------------------------------------------------------

def _signed64(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


def _decode_tensor(data: bytes) -> Tensor:
    name = ""
    dims: List[int] = []
    data_type = FLOAT
    raw = b""
    typed = bytearray()
    int64s: List[int] = []
    for field_no, wtype, value in _scan(data):
        if field_no == 1:
            dims.append(_signed64(value) if wtype == _VARINT else
                        int.from_bytes(value, "little"))
        elif field_no == 2 and wtype == _VARINT:
            data_type = value
        elif field_no == 4:  # float_data, packed or not
            typed.extend(value if wtype != _VARINT else b"")
        elif field_no == 7:  # int64_data, packed varints
            if wtype == _VARINT:
                int64s.append(_signed64(value))
            else:
                i = 0
                while i < len(value):
                    v, i = _read_varint(value, i)
                    int64s.append(_signed64(v))
        elif field_no == 8 and wtype == _LEN:
            name = value.decode("utf-8")
        elif field_no == 9 and wtype == _LEN:
            raw = value
        elif field_no == 10:  # double_data
            typed.extend(value if wtype != _VARINT else b"")
        # anything else (segment, external data, doc strings) is skipped
    if not raw:
        if int64s:
            raw = np.array(int64s, dtype="<i8").tobytes()
            data_type = INT64
        else:
            raw = bytes(typed)
    return Tensor(name, tuple(dims), data_type, raw)


def _decode_node(data: bytes) -> Node:
    op_type = name = ""
    inputs: List[str] = []
    outputs: List[str] = []
    for field_no, wtype, value in _scan(data):
        if field_no == 1 and wtype == _LEN:
            inputs.append(value.decode("utf-8"))
        elif field_no == 2 and wtype == _LEN:
            outputs.append(value.decode("utf-8"))
        elif field_no == 3 and wtype == _LEN:
            name = value.decode("utf-8")
        elif field_no == 4 and wtype == _LEN:
            op_type = value.decode("utf-8")
    return Node(op_type, name, tuple(inputs), tuple(outputs))


def _decode_value_info_name(data: bytes) -> str:
    for field_no, wtype, value in _scan(data):
        if field_no == 1 and wtype == _LEN:
            return value.decode("utf-8")
    return ""


def _decode_graph(data: bytes) -> Graph:
    g = Graph()
    inputs: List[str] = []
    outputs: List[str] = []
    for field_no, wtype, value in _scan(data):
        if field_no == 1 and wtype == _LEN:
            g.nodes.append(_decode_node(value))
        elif field_no == 2 and wtype == _LEN:
            g.name = value.decode("utf-8")
        elif field_no == 5 and wtype == _LEN:
            g.initializers.append(_decode_tensor(value))
        elif field_no == 11 and wtype == _LEN:
            inputs.append(_decode_value_info_name(value))
        elif field_no == 12 and wtype == _LEN:
            outputs.append(_decode_value_info_name(value))
    g.input_names = tuple(inputs)
    g.output_names = tuple(outputs)
    return g


def decode_model(data: bytes) -> Model:
    ir_version = 0
    producer = ""
    graph = None
    opset = 0
    for field_no, wtype, value in _scan(data):
        if field_no == 1 and wtype == _VARINT:
            ir_version = value
        elif field_no == 2 and wtype == _LEN:
            producer = value.decode("utf-8")
        elif field_no == 7 and wtype == _LEN:
            graph = _decode_graph(value)
        elif field_no == 8 and wtype == _LEN:
            for f2, w2, v2 in _scan(value):
                if f2 == 2 and w2 == _VARINT:
                    opset = v2
    if graph is None:
        raise OnnxWireError("model has no graph")
    return Model(graph, ir_version=ir_version, producer=producer, opset_version=opset)


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        return decode_model(fh.read())


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_model(model))

"""Typed views over ONNX protobuf messages.

Parses only the fields the converter needs, by field number, using the
generic wire reader. Unknown fields are skipped, matching protobuf
semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import wire


class OnnxError(ValueError):
    pass


# TensorProto.DataType values -> numpy dtypes we can materialize.
TENSOR_DTYPES = {
    1: np.dtype("<f4"),   # FLOAT
    2: np.dtype("u1"),    # UINT8
    3: np.dtype("i1"),    # INT8
    6: np.dtype("<i4"),   # INT32
    7: np.dtype("<i8"),   # INT64
}


@dataclass
class Tensor:
    name: str = ""
    dims: list[int] = field(default_factory=list)
    data_type: int = 0
    raw_data: bytes = b""
    # repeated scalar payloads for non-raw encodings
    float_data: list[float] = field(default_factory=list)
    int32_data: list[int] = field(default_factory=list)
    int64_data: list[int] = field(default_factory=list)

    def payload(self) -> bytes:
        """Little-endian bytes exactly as stored (raw_data passes through
        untouched)."""
        if self.raw_data:
            return self.raw_data
        if self.float_data:
            return np.asarray(self.float_data, dtype="<f4").tobytes()
        if self.int64_data:
            return np.asarray(self.int64_data, dtype="<i8").tobytes()
        if self.int32_data:
            return np.asarray(self.int32_data, dtype="<i4").tobytes()
        return b""

    def to_array(self) -> np.ndarray:
        dt = TENSOR_DTYPES.get(self.data_type)
        if dt is None:
            raise OnnxError(
                f"tensor {self.name!r}: unsupported data type {self.data_type}")
        n = int(np.prod(self.dims)) if self.dims else 1
        buf = self.payload()
        if len(buf) != n * dt.itemsize:
            raise OnnxError(
                f"tensor {self.name!r}: payload is {len(buf)} bytes, "
                f"expected {n * dt.itemsize}")
        return np.frombuffer(buf, dtype=dt).reshape(self.dims).copy()


@dataclass
class Attribute:
    name: str = ""
    f: float = 0.0
    i: int = 0
    s: bytes = b""
    t: Tensor | None = None
    floats: list[float] = field(default_factory=list)
    ints: list[int] = field(default_factory=list)
    type: int = 0  # AttributeProto.AttributeType


@dataclass
class Node:
    op_type: str = ""
    name: str = ""
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    attrs: dict[str, Attribute] = field(default_factory=dict)


@dataclass
class ValueInfo:
    name: str = ""
    elem_type: int = 0
    # each dim is an int, or a string for symbolic (dim_param) axes
    dims: list[int | str] = field(default_factory=list)


@dataclass
class Graph:
    name: str = ""
    nodes: list[Node] = field(default_factory=list)
    initializers: list[Tensor] = field(default_factory=list)
    inputs: list[ValueInfo] = field(default_factory=list)
    outputs: list[ValueInfo] = field(default_factory=list)


def _parse_tensor(buf: bytes) -> Tensor:
    t = Tensor()
    for fno, wt, val in wire.fields(buf):
        if fno == 1:  # dims
            if wt == 0:
                t.dims.append(wire.as_signed(val))
            else:
                t.dims.extend(wire.packed_varints(val))
        elif fno == 2:
            t.data_type = val
        elif fno == 4:  # float_data
            if wt == 5:
                t.float_data.append(wire.as_float32(val))
            else:  # packed
                t.float_data.extend(
                    np.frombuffer(val, dtype="<f4").tolist())
        elif fno == 5:  # int32_data
            if wt == 0:
                t.int32_data.append(wire.as_signed(val))
            else:
                t.int32_data.extend(wire.packed_varints(val))
        elif fno == 7:  # int64_data
            if wt == 0:
                t.int64_data.append(wire.as_signed(val))
            else:
                t.int64_data.extend(wire.packed_varints(val))
        elif fno == 8:
            t.name = val.decode("utf-8")
        elif fno == 9:
            t.raw_data = val
    return t


def _parse_attribute(buf: bytes) -> Attribute:
    a = Attribute()
    for fno, wt, val in wire.fields(buf):
        if fno == 1:
            a.name = val.decode("utf-8")
        elif fno == 2:
            a.f = wire.as_float32(val)
        elif fno == 3:
            a.i = wire.as_signed(val)
        elif fno == 4:
            a.s = val
        elif fno == 5:
            a.t = _parse_tensor(val)
        elif fno == 7:
            if wt == 5:
                a.floats.append(wire.as_float32(val))
            else:
                a.floats.extend(np.frombuffer(val, dtype="<f4").tolist())
        elif fno == 8:
            if wt == 0:
                a.ints.append(wire.as_signed(val))
            else:
                a.ints.extend(wire.packed_varints(val))
        elif fno == 20:
            a.type = val
    return a


def _parse_node(buf: bytes) -> Node:
    n = Node()
    for fno, _, val in wire.fields(buf):
        if fno == 1:
            n.inputs.append(val.decode("utf-8"))
        elif fno == 2:
            n.outputs.append(val.decode("utf-8"))
        elif fno == 3:
            n.name = val.decode("utf-8")
        elif fno == 4:
            n.op_type = val.decode("utf-8")
        elif fno == 5:
            a = _parse_attribute(val)
            n.attrs[a.name] = a
    return n


def _parse_value_info(buf: bytes) -> ValueInfo:
    vi = ValueInfo()
    type_buf = b""
    for fno, _, val in wire.fields(buf):
        if fno == 1:
            vi.name = val.decode("utf-8")
        elif fno == 2:
            type_buf = val
    tensor_type = b""
    for fno, _, val in wire.fields(type_buf):
        if fno == 1:  # TypeProto.tensor_type
            tensor_type = val
    shape_buf = b""
    for fno, _, val in wire.fields(tensor_type):
        if fno == 1:
            vi.elem_type = val
        elif fno == 2:
            shape_buf = val
    for fno, _, dim_buf in wire.fields(shape_buf):
        if fno != 1:  # TensorShapeProto.dim
            continue
        value: int | str = 0
        for dfno, _, dval in wire.fields(dim_buf):
            if dfno == 1:  # dim_value
                value = wire.as_signed(dval)
            elif dfno == 2:  # dim_param (symbolic)
                value = dval.decode("utf-8")
        vi.dims.append(value)
    return vi


def _parse_graph(buf: bytes) -> Graph:
    g = Graph()
    for fno, _, val in wire.fields(buf):
        if fno == 1:
            g.nodes.append(_parse_node(val))
        elif fno == 2:
            g.name = val.decode("utf-8")
        elif fno == 5:
            g.initializers.append(_parse_tensor(val))
        elif fno == 11:
            g.inputs.append(_parse_value_info(val))
        elif fno == 12:
            g.outputs.append(_parse_value_info(val))
    return g


def load_model(path: str) -> Graph:
    """Parse the GraphProto out of an ONNX model file."""
    with open(path, "rb") as f:
        buf = f.read()
    graph_buf = None
    try:
        for fno, _, val in wire.fields(buf):
            if fno == 7:  # ModelProto.graph
                graph_buf = val
    except wire.WireError as exc:
        raise OnnxError(f"{path}: not a valid ONNX file ({exc})") from exc
    if graph_buf is None:
        raise OnnxError(f"{path}: no graph found (not an ONNX model?)")
    return _parse_graph(graph_buf)

"""Minimal protobuf wire-format reader.

Only what ONNX model files need: varint, 32/64-bit scalar and
length-delimited fields, packed repeated scalars. No code generation; the
model layer (model.py) maps field numbers to names explicitly.
"""

from __future__ import annotations

import struct


class WireError(ValueError):
    pass


def read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise WireError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise WireError("varint too long")


def fields(buf: bytes):
    """Yield (field_number, wire_type, value) for every field in buf.
    value is an int for varint/fixed fields and bytes for
    length-delimited ones."""
    pos = 0
    while pos < len(buf):
        key, pos = read_varint(buf, pos)
        fno, wt = key >> 3, key & 7
        if wt == 0:  # varint
            val, pos = read_varint(buf, pos)
        elif wt == 1:  # 64-bit
            if pos + 8 > len(buf):
                raise WireError("truncated fixed64")
            val = int.from_bytes(buf[pos:pos + 8], "little")
            pos += 8
        elif wt == 2:  # length-delimited
            n, pos = read_varint(buf, pos)
            if pos + n > len(buf):
                raise WireError("truncated bytes field")
            val = buf[pos:pos + n]
            pos += n
        elif wt == 5:  # 32-bit
            if pos + 4 > len(buf):
                raise WireError("truncated fixed32")
            val = int.from_bytes(buf[pos:pos + 4], "little")
            pos += 4
        else:
            raise WireError(f"unsupported wire type {wt}")
        yield fno, wt, val


def as_signed(v: int) -> int:
    """Interpret a varint as a two's-complement int64."""
    return v - (1 << 64) if v >= (1 << 63) else v


def as_float32(v: int) -> float:
    return struct.unpack("<f", v.to_bytes(4, "little"))[0]


def packed_varints(data: bytes) -> list[int]:
    out = []
    pos = 0
    while pos < len(data):
        v, pos = read_varint(data, pos)
        out.append(as_signed(v))
    return out

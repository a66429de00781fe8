"""Compact binary message codec used on the acoustic link.

Values are encoded as a restricted CBOR subset: unsigned/negative integers,
byte strings, UTF-8 text, arrays, booleans, and IEEE floats. Maps, tags and
indefinite lengths are not part of the subset and are rejected on decode.
Integer heads always use the smallest legal width; floats use the narrowest
of half/single/double that reproduces the original binary64 bit pattern.

Framing on the wire:

    +------+-------------+-----------+-----------+-----+---------+-----+
    | 0xA5 | stream_type | stream_id | [req_seq] | len | payload | 0x5A|
    +------+-------------+-----------+-----------+-----+---------+-----+

req_seq is present only for client requests and service responses. The
deframer scans a byte stream, resynchronising on corruption by discarding
one byte at a time, and never raises on garbage input.

Messages are described by a small schema tree (leaves, structs, sequences)
and are flattened depth-first into a list of primitive values before
encoding; sequences contribute an unsigned count followed by their
elements. Unflattening is the exact inverse.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Union

START_BYTE = 0xA5
END_BYTE = 0x5A

# CBOR major types used by the subset
_MT_UINT = 0
_MT_NINT = 1
_MT_BYTES = 2
_MT_TEXT = 3
_MT_ARRAY = 4
_MT_SIMPLE = 7

_SIMPLE_FALSE = 0xF4
_SIMPLE_TRUE = 0xF5
_FLOAT16 = 0xF9
_FLOAT32 = 0xFA
_FLOAT64 = 0xFB

CANONICAL_NAN = b"\xf9\x7e\x00"

UINT_MAX = 2**64 - 1
NINT_MIN = -(2**64)


class CodecError(ValueError):
    """Base class for encode/decode failures."""


class UnsupportedValue(CodecError):
    """Value outside the encodable domain (range or type)."""


class Truncated(CodecError):
    """Buffer ended before the value it declares."""


class UnsupportedMajorType(CodecError):
    """Well-formed CBOR outside the supported subset (maps, tags, ...)."""


class MalformedUtf8(CodecError):
    """Text payload is not valid UTF-8."""


class SchemaMismatch(CodecError):
    """Value does not conform to the schema node it was matched against."""


class Underrun(CodecError):
    """Flat value list exhausted before the schema was satisfied."""


class Overrun(CodecError):
    """Flat value list has values left over after the schema was satisfied."""


class PayloadTooLong(CodecError):
    """Frame payload exceeds the one-byte length field."""


class UnknownStream(KeyError):
    """Stream name or id absent from the registry."""


Value = Union[bool, int, float, str, bytes, list]


def _encode_head(major: int, n: int) -> bytes:
    """Encode a major type head with the smallest legal width for n."""
    base = major << 5
    if n < 24:
        return bytes([base | n])
    if n <= 0xFF:
        return bytes([base | 24, n])
    if n <= 0xFFFF:
        return struct.pack(">BH", base | 25, n)
    if n <= 0xFFFFFFFF:
        return struct.pack(">BI", base | 26, n)
    return struct.pack(">BQ", base | 27, n)


def _encode_float(v: float) -> bytes:
    if math.isnan(v):
        return CANONICAL_NAN
    wide = struct.pack(">d", v)
    try:
        half = struct.pack(">e", v)
        if struct.pack(">d", struct.unpack(">e", half)[0]) == wide:
            return bytes([_FLOAT16]) + half
    except (OverflowError, ValueError):
        pass
    try:
        single = struct.pack(">f", v)
        if struct.pack(">d", struct.unpack(">f", single)[0]) == wide:
            return bytes([_FLOAT32]) + single
    except (OverflowError, ValueError):
        pass
    return bytes([_FLOAT64]) + wide


def encode_value(v: Value) -> bytes:
    """Encode one primitive or array value to its canonical byte form."""
    if isinstance(v, bool):
        return bytes([_SIMPLE_TRUE if v else _SIMPLE_FALSE])
    if isinstance(v, int):
        if v >= 0:
            if v > UINT_MAX:
                raise UnsupportedValue(f"unsigned integer too large: {v}")
            return _encode_head(_MT_UINT, v)
        if v < NINT_MIN:
            raise UnsupportedValue(f"negative integer too small: {v}")
        return _encode_head(_MT_NINT, -1 - v)
    if isinstance(v, float):
        return _encode_float(v)
    if isinstance(v, bytes):
        return _encode_head(_MT_BYTES, len(v)) + v
    if isinstance(v, str):
        raw = v.encode("utf-8")
        return _encode_head(_MT_TEXT, len(raw)) + raw
    if isinstance(v, list):
        out = [_encode_head(_MT_ARRAY, len(v))]
        out.extend(encode_value(item) for item in v)
        return b"".join(out)
    raise UnsupportedValue(f"cannot encode {type(v).__name__}")


def encode_values(values: list[Value]) -> bytes:
    """Concatenate the encodings of a flat value list into one payload."""
    return b"".join(encode_value(v) for v in values)


def _decode_uint(buf: bytes, pos: int, info: int) -> tuple[int, int]:
    """Decode the integer argument of a head, returning (n, new_pos)."""
    if info < 24:
        return info, pos
    if info == 24:
        width, fmt = 1, ">B"
    elif info == 25:
        width, fmt = 2, ">H"
    elif info == 26:
        width, fmt = 4, ">I"
    elif info == 27:
        width, fmt = 8, ">Q"
    else:
        raise UnsupportedMajorType(f"reserved/indefinite head info {info}")
    if pos + width > len(buf):
        raise Truncated("head argument runs past end of buffer")
    return struct.unpack_from(fmt, buf, pos)[0], pos + width


def decode_value(buf: bytes, pos: int = 0) -> tuple[Value, int]:
    """Decode one value starting at pos, returning (value, new_pos)."""
    if pos >= len(buf):
        raise Truncated("empty buffer")
    head = buf[pos]
    major, info = head >> 5, head & 0x1F
    pos += 1
    if major == _MT_UINT:
        return _decode_uint(buf, pos, info)
    if major == _MT_NINT:
        n, pos = _decode_uint(buf, pos, info)
        return -1 - n, pos
    if major in (_MT_BYTES, _MT_TEXT):
        n, pos = _decode_uint(buf, pos, info)
        if pos + n > len(buf):
            raise Truncated("string body runs past end of buffer")
        raw = bytes(buf[pos : pos + n])
        if major == _MT_BYTES:
            return raw, pos + n
        try:
            return raw.decode("utf-8"), pos + n
        except UnicodeDecodeError as exc:
            raise MalformedUtf8(str(exc)) from exc
    if major == _MT_ARRAY:
        n, pos = _decode_uint(buf, pos, info)
        items = []
        for _ in range(n):
            item, pos = decode_value(buf, pos)
            items.append(item)
        return items, pos
    if major == _MT_SIMPLE:
        if head == _SIMPLE_FALSE:
            return False, pos
        if head == _SIMPLE_TRUE:
            return True, pos
        if head in (_FLOAT16, _FLOAT32, _FLOAT64):
            width, fmt = {_FLOAT16: (2, ">e"), _FLOAT32: (4, ">f"), _FLOAT64: (8, ">d")}[head]
            if pos + width > len(buf):
                raise Truncated("float body runs past end of buffer")
            return struct.unpack_from(fmt, buf, pos)[0], pos + width
        raise UnsupportedMajorType(f"simple value 0x{head:02x} not in subset")
    raise UnsupportedMajorType(f"major type {major} not in subset")


def decode_values(buf: bytes) -> list[Value]:
    """Decode a payload into the flat value list it encodes."""
    values, pos = [], 0
    while pos < len(buf):
        v, pos = decode_value(buf, pos)
        values.append(v)
    return values


# --- schemas ---------------------------------------------------------------

LEAF_KINDS = frozenset({"uint", "int", "bool", "float32", "float64", "text", "bytes"})


@dataclass(frozen=True)
class Leaf:
    kind: str

    def __post_init__(self):
        if self.kind not in LEAF_KINDS:
            raise ValueError(f"unknown leaf kind {self.kind!r}")


@dataclass(frozen=True)
class Struct:
    """Named fields in declaration order."""

    fields: tuple[tuple[str, "Schema"], ...]


@dataclass(frozen=True)
class Sequence:
    """Variable-length run of one element schema, count-prefixed on the wire."""

    element: "Schema"


Schema = Union[Leaf, Struct, Sequence]


def _check_leaf(kind: str, v: Value) -> Value:
    if kind == "bool":
        if isinstance(v, bool):
            return v
    elif kind == "uint":
        if isinstance(v, int) and not isinstance(v, bool) and v >= 0:
            return v
    elif kind == "int":
        if isinstance(v, int) and not isinstance(v, bool):
            return v
    elif kind in ("float32", "float64"):
        if isinstance(v, float):
            return v
    elif kind == "text":
        if isinstance(v, str):
            return v
    elif kind == "bytes":
        if isinstance(v, bytes):
            return v
    raise SchemaMismatch(f"value {v!r} does not match leaf kind {kind!r}")


def flatten(msg, schema: Schema, out: list[Value] | None = None) -> list[Value]:
    """Flatten a structured message depth-first into primitive values.

    Structs contribute their fields in declaration order, sequences an
    unsigned count followed by the flattened elements.
    """
    if out is None:
        out = []
    if isinstance(schema, Leaf):
        out.append(_check_leaf(schema.kind, msg))
    elif isinstance(schema, Struct):
        if not isinstance(msg, dict):
            raise SchemaMismatch(f"expected dict for struct, got {type(msg).__name__}")
        for name, sub in schema.fields:
            if name not in msg:
                raise SchemaMismatch(f"missing struct field {name!r}")
            flatten(msg[name], sub, out)
    elif isinstance(schema, Sequence):
        if not isinstance(msg, list):
            raise SchemaMismatch(f"expected list for sequence, got {type(msg).__name__}")
        out.append(len(msg))
        for item in msg:
            flatten(item, schema.element, out)
    else:
        raise SchemaMismatch(f"not a schema node: {schema!r}")
    return out


def _unflatten(values: list[Value], pos: int, schema: Schema):
    if isinstance(schema, Leaf):
        if pos >= len(values):
            raise Underrun("flat values exhausted")
        return _check_leaf(schema.kind, values[pos]), pos + 1
    if isinstance(schema, Struct):
        msg = {}
        for name, sub in schema.fields:
            msg[name], pos = _unflatten(values, pos, sub)
        return msg, pos
    if isinstance(schema, Sequence):
        if pos >= len(values):
            raise Underrun("flat values exhausted")
        count = values[pos]
        if not isinstance(count, int) or isinstance(count, bool) or count < 0:
            raise SchemaMismatch(f"sequence count must be unsigned, got {count!r}")
        pos += 1
        items = []
        for _ in range(count):
            item, pos = _unflatten(values, pos, schema.element)
            items.append(item)
        return items, pos
    raise SchemaMismatch(f"not a schema node: {schema!r}")


def unflatten(values: list[Value], schema: Schema):
    """Rebuild a structured message from its flat value list, exactly."""
    msg, pos = _unflatten(values, 0, schema)
    if pos != len(values):
        raise Overrun(f"{len(values) - pos} values left over")
    return msg


# --- framing ---------------------------------------------------------------


class StreamType(IntEnum):
    PUBLISHER = 0x00
    CLIENT_REQUEST = 0x01
    SERVICE_RESPONSE = 0x02


@dataclass(frozen=True)
class Packet:
    stream_type: StreamType
    stream_id: int
    payload: bytes
    req_seq: int | None = None

    def __post_init__(self):
        if not 0 <= self.stream_id <= 0xFF:
            raise ValueError(f"stream_id out of range: {self.stream_id}")
        if self.stream_type != StreamType.PUBLISHER:
            if self.req_seq is None or not 0 <= self.req_seq <= 0xFF:
                raise ValueError("req_seq required (0..255) for request/response packets")
        elif self.req_seq is not None:
            raise ValueError("publisher packets carry no req_seq")


def frame(pkt: Packet) -> bytes:
    """Wrap a packet in start/end markers with its length byte."""
    if len(pkt.payload) > 0xFF:
        raise PayloadTooLong(f"payload is {len(pkt.payload)} bytes, max 255")
    head = [START_BYTE, int(pkt.stream_type), pkt.stream_id]
    if pkt.stream_type != StreamType.PUBLISHER:
        head.append(pkt.req_seq)
    head.append(len(pkt.payload))
    return bytes(head) + pkt.payload + bytes([END_BYTE])


def frame_overhead(stream_type: StreamType) -> int:
    """Framing bytes added around a payload for the given stream type."""
    return 5 if stream_type == StreamType.PUBLISHER else 6


def _try_parse_frame(buf: bytes, pos: int) -> tuple[Packet, int] | None:
    """Parse one frame at pos, or None if the bytes there are not a frame."""
    n = len(buf)
    if buf[pos] != START_BYTE or pos + 2 > n:
        return None
    stype = buf[pos + 1]
    if stype not in (0x00, 0x01, 0x02):
        return None
    hdr = 4 if stype == 0x00 else 5  # start, type, id, [req_seq], len
    if pos + hdr > n:
        return None
    length = buf[pos + hdr - 1]
    end = pos + hdr + length
    if end >= n or buf[end] != END_BYTE:
        return None
    payload = bytes(buf[pos + hdr : end])
    req_seq = buf[pos + 3] if stype != 0x00 else None
    pkt = Packet(StreamType(stype), buf[pos + 2], payload, req_seq)
    return pkt, end + 1


def deframe(data: bytes) -> tuple[list[Packet], int]:
    """Extract all well-formed frames from a byte stream.

    Returns (packets, skipped) where skipped counts every byte that was not
    part of a recovered frame. Corruption causes a one-byte skip and rescan,
    never an exception.
    """
    packets: list[Packet] = []
    skipped = 0
    pos, n = 0, len(data)
    while pos < n:
        if data[pos] == START_BYTE:
            parsed = _try_parse_frame(data, pos)
            if parsed is not None:
                pkt, pos = parsed
                packets.append(pkt)
                continue
        skipped += 1
        pos += 1
    return packets, skipped


# --- stream registry -------------------------------------------------------


class StreamRegistry:
    """Name to id mapping for topics and services, unique in both directions."""

    def __init__(self, topics: dict[str, int], services: dict[str, int] | None = None):
        services = services or {}
        self._kind: dict[str, str] = {}
        self._ids: dict[str, int] = {}
        self._names: dict[int, str] = {}
        for kind, table in (("topic", topics), ("service", services)):
            for name, sid in table.items():
                if not isinstance(sid, int) or not 0 <= sid <= 0xFF:
                    raise ValueError(f"stream id for {name!r} out of range: {sid!r}")
                if name in self._ids:
                    raise ValueError(f"duplicate stream name {name!r}")
                if sid in self._names:
                    raise ValueError(f"duplicate stream id {sid} ({name!r} vs {self._names[sid]!r})")
                self._ids[name] = sid
                self._names[sid] = name
                self._kind[name] = kind

    @classmethod
    def from_file(cls, path) -> "StreamRegistry":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(doc.get("topics", {}), doc.get("services", {}))

    def id_of(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise UnknownStream(name) from None

    def name_of(self, stream_id: int) -> str:
        try:
            return self._names[stream_id]
        except KeyError:
            raise UnknownStream(stream_id) from None

    def kind_of(self, name: str) -> str:
        try:
            return self._kind[name]
        except KeyError:
            raise UnknownStream(name) from None

    def names(self) -> list[str]:
        return list(self._ids)

"""Codec tests.

Frozen byte vectors below follow the public CBOR reference vectors
(RFC 8949 appendix A) for everything inside the supported subset, so the
encoder is checked against an authority independent of this codebase.
`ref_decode` is a second, deliberately different decoder implementation
(int.from_bytes, no struct) used to cross-check random encodings.
"""

import math
import struct

import pytest
from hypothesis import given, settings, strategies as st

from auvnetsim import msgcodec as mc
from auvnetsim.msgcodec import (
    Leaf,
    Packet,
    Sequence,
    Struct,
    StreamRegistry,
    StreamType,
    decode_value,
    decode_values,
    deframe,
    encode_value,
    encode_values,
    flatten,
    frame,
    unflatten,
)

# --- independent reference decoder ------------------------------------------


def _ref_float(raw: bytes) -> float:
    fmt = {2: ">e", 4: ">f", 8: ">d"}[len(raw)]
    return struct.unpack(fmt, raw)[0]


def ref_decode(buf: bytes, pos: int = 0):
    """Minimal CBOR subset reader, written independently of the codec."""
    head = buf[pos]
    major, info = divmod(head, 32)
    pos += 1
    if info < 24:
        arg = info
    else:
        width = {24: 1, 25: 2, 26: 4, 27: 8}[info]
        arg = int.from_bytes(buf[pos : pos + width], "big")
        assert pos + width <= len(buf)
        pos += width
    if major == 0:
        return arg, pos
    if major == 1:
        return -1 - arg, pos
    if major == 2:
        return buf[pos : pos + arg], pos + arg
    if major == 3:
        return buf[pos : pos + arg].decode("utf-8"), pos + arg
    if major == 4:
        items = []
        for _ in range(arg):
            item, pos = ref_decode(buf, pos)
            items.append(item)
        return items, pos
    if major == 7:
        if info == 20:
            return False, pos
        if info == 21:
            return True, pos
        width = {25: 2, 26: 4, 27: 8}[info]
        return _ref_float(arg.to_bytes(width, "big")), pos
    raise AssertionError(f"major {major} unexpected in subset")


# --- frozen reference vectors ------------------------------------------------

INT_VECTORS = [
    (0, "00"),
    (1, "01"),
    (10, "0a"),
    (23, "17"),
    (24, "1818"),
    (25, "1819"),
    (100, "1864"),
    (255, "18ff"),
    (256, "190100"),
    (500, "1901f4"),
    (1000, "1903e8"),
    (65535, "19ffff"),
    (65536, "1a00010000"),
    (1000000, "1a000f4240"),
    (2**32 - 1, "1affffffff"),
    (2**32, "1b0000000100000000"),
    (1000000000000, "1b000000e8d4a51000"),
    (2**64 - 1, "1bffffffffffffffff"),
    (-1, "20"),
    (-5, "24"),
    (-10, "29"),
    (-24, "37"),
    (-25, "3818"),
    (-100, "3863"),
    (-256, "38ff"),
    (-257, "390100"),
    (-1000, "3903e7"),
    (-(2**32), "3affffffff"),
    (-(2**64), "3bffffffffffffffff"),
]

FLOAT_VECTORS = [
    (0.0, "f90000"),
    (-0.0, "f98000"),
    (1.0, "f93c00"),
    (1.5, "f93e00"),
    (-4.0, "f9c400"),
    (65504.0, "f97bff"),
    (5.960464477539063e-8, "f90001"),
    (0.00006103515625, "f90400"),
    (1.1, "fb3ff199999999999a"),
    (100000.0, "fa47c35000"),
    (3.4028234663852886e38, "fa7f7fffff"),
    (1.0e300, "fb7e37e43c8800759c"),
    (float("inf"), "f97c00"),
    (float("-inf"), "f9fc00"),
]

MISC_VECTORS = [
    (True, "f5"),
    (False, "f4"),
    (b"", "40"),
    (b"\x01\x02\x03\x04", "4401020304"),
    ("", "60"),
    ("a", "6161"),
    ("IETF", "6449455446"),
    ("ü", "62c3bc"),
    ([], "80"),
    ([1, 2, 3], "83010203"),
    ([1, [2, 3], [4, 5]], "8301820203820405"),
    (list(range(1, 26)), "98190102030405060708090a0b0c0d0e0f101112131415161718181819"),
]


@pytest.mark.parametrize("value,hexpect", INT_VECTORS + FLOAT_VECTORS + MISC_VECTORS)
def test_encode_reference_vectors(value, hexpect):
    assert encode_value(value).hex() == hexpect


@pytest.mark.parametrize("value,hexpect", INT_VECTORS + FLOAT_VECTORS + MISC_VECTORS)
def test_decode_reference_vectors(value, hexpect):
    got, pos = decode_value(bytes.fromhex(hexpect))
    assert pos == len(hexpect) // 2
    assert got == value and type(got) is type(value)


def test_nan_is_canonical():
    assert encode_value(float("nan")) == b"\xf9\x7e\x00"
    assert encode_value(struct.unpack(">d", b"\x7f\xf8\x00\x00\x00\x12\x34\x56")[0]) == b"\xf9\x7e\x00"
    got, _ = decode_value(b"\xf9\x7e\x00")
    assert math.isnan(got)


def test_integer_head_width_is_minimal():
    # width oracle straight from the head rules
    def width(n):
        if n < 24:
            return 0
        if n <= 0xFF:
            return 1
        if n <= 0xFFFF:
            return 2
        if n <= 0xFFFFFFFF:
            return 4
        return 8

    for n in [0, 5, 23, 24, 200, 255, 256, 40000, 65535, 65536, 2**31, 2**32 - 1, 2**32, 2**63, 2**64 - 1]:
        assert len(encode_value(n)) == 1 + width(n)
        assert len(encode_value(-1 - n)) == 1 + width(n)


def test_float_width_is_minimal():
    # smallest IEEE width whose value re-widens to the original bit pattern
    def smallest(v):
        bits = struct.pack(">d", v)
        for fmt, w in ((">e", 2), (">f", 4)):
            try:
                if struct.pack(">d", struct.unpack(fmt, struct.pack(fmt, v))[0]) == bits:
                    return w
            except (OverflowError, ValueError):
                pass
        return 8

    for v in [0.0, -0.0, 1.0, 1.5, 1.1, 3.14159, 100000.0, 65504.0, 65505.0, 1e-8, 2.5e-8, 1e300, -2.0**-24]:
        assert len(encode_value(v)) == 1 + smallest(v)


def test_value_range_limits():
    encode_value(2**64 - 1)
    encode_value(-(2**64))
    with pytest.raises(mc.UnsupportedValue):
        encode_value(2**64)
    with pytest.raises(mc.UnsupportedValue):
        encode_value(-(2**64) - 1)
    with pytest.raises(mc.UnsupportedValue):
        encode_value(None)


def test_decode_rejects_outside_subset():
    with pytest.raises(mc.UnsupportedMajorType):
        decode_value(bytes.fromhex("a161610c"))  # map
    with pytest.raises(mc.UnsupportedMajorType):
        decode_value(bytes.fromhex("c11a514b67b0"))  # tag
    with pytest.raises(mc.UnsupportedMajorType):
        decode_value(bytes.fromhex("5f41004101ff"))  # indefinite bytes
    with pytest.raises(mc.UnsupportedMajorType):
        decode_value(b"\xf6")  # null simple value


def test_decode_truncation():
    for good in ["f93e00", "1901f4", "6449455446", "83010203", "1bffffffffffffffff"]:
        raw = bytes.fromhex(good)
        for cut in range(1, len(raw)):
            with pytest.raises(mc.Truncated):
                decode_value(raw[:cut])
    with pytest.raises(mc.Truncated):
        decode_value(b"")


def test_decode_malformed_utf8():
    with pytest.raises(mc.MalformedUtf8):
        decode_value(bytes.fromhex("62c328"))


# --- hypothesis strategies ---------------------------------------------------

scalars = st.one_of(
    st.booleans(),
    st.integers(min_value=-(2**64), max_value=2**64 - 1),
    st.floats(allow_nan=False),
    st.text(max_size=32),
    st.binary(max_size=32),
)
values = st.recursive(scalars, lambda inner: st.lists(inner, max_size=6), max_leaves=24)


@given(values)
@settings(max_examples=300)
def test_value_round_trip(v):
    buf = encode_value(v)
    got, pos = decode_value(buf)
    assert pos == len(buf)
    assert got == v


@given(values)
@settings(max_examples=300)
def test_encoding_agrees_with_reference_decoder(v):
    buf = encode_value(v)
    got, pos = ref_decode(buf)
    assert pos == len(buf)
    assert got == v


@given(st.lists(values, max_size=8))
def test_payload_round_trip(vs):
    assert decode_values(encode_values(vs)) == vs


# --- schemas -----------------------------------------------------------------

leaf_kinds = st.sampled_from(sorted(mc.LEAF_KINDS))
schemas = st.recursive(
    leaf_kinds.map(Leaf),
    lambda inner: st.one_of(
        st.lists(st.tuples(st.text(st.characters(min_codepoint=97, max_codepoint=122), min_size=1, max_size=6), inner), min_size=1, max_size=4, unique_by=lambda kv: kv[0]).map(
            lambda kvs: Struct(tuple(kvs))
        ),
        inner.map(Sequence),
    ),
    max_leaves=8,
)


def message_for(schema, draw):
    if isinstance(schema, Leaf):
        return draw(
            {
                "uint": st.integers(0, 2**64 - 1),
                "int": st.integers(-(2**64), 2**64 - 1),
                "bool": st.booleans(),
                "float32": st.floats(allow_nan=False, width=32).map(float),
                "float64": st.floats(allow_nan=False),
                "text": st.text(max_size=8),
                "bytes": st.binary(max_size=8),
            }[schema.kind]
        )
    if isinstance(schema, Struct):
        return {name: message_for(sub, draw) for name, sub in schema.fields}
    return [message_for(schema.element, draw) for _ in range(draw(st.integers(0, 3)))]


@given(st.data())
@settings(max_examples=200)
def test_flatten_unflatten_round_trip(data):
    schema = data.draw(schemas)
    msg = message_for(schema, data.draw)
    flat = flatten(msg, schema)
    assert unflatten(flat, schema) == msg
    # and the full wire trip preserves it too
    assert unflatten(decode_values(encode_values(flat)), schema) == msg


def test_flatten_example_order():
    schema = Struct((("a", Leaf("uint")), ("b", Sequence(Leaf("float32")))))
    assert flatten({"a": 7, "b": [1.5]}, schema) == [7, 1, 1.5]
    assert unflatten([7, 1, 1.5], schema) == {"a": 7, "b": [1.5]}


def test_unflatten_underrun_overrun():
    schema = Struct((("a", Leaf("uint")), ("b", Sequence(Leaf("float32")))))
    with pytest.raises(mc.Underrun):
        unflatten([7, 1], schema)
    with pytest.raises(mc.Overrun):
        unflatten([7, 0, 9], schema)
    with pytest.raises(mc.SchemaMismatch):
        unflatten([7, -1], schema)
    with pytest.raises(mc.SchemaMismatch):
        flatten({"a": "nope", "b": []}, schema)
    with pytest.raises(mc.SchemaMismatch):
        flatten({"b": []}, schema)


def test_leaf_kind_checks():
    with pytest.raises(mc.SchemaMismatch):
        flatten(True, Leaf("uint"))  # bools are not unsigned ints
    with pytest.raises(mc.SchemaMismatch):
        flatten(-3, Leaf("uint"))
    with pytest.raises(mc.SchemaMismatch):
        flatten(1, Leaf("float64"))
    flatten(True, Leaf("bool"))
    with pytest.raises(ValueError):
        Leaf("float16")


# --- framing -----------------------------------------------------------------


def test_frame_layout_publisher():
    pkt = Packet(StreamType.PUBLISHER, 3, b"\x0a")
    assert frame(pkt) == bytes.fromhex("a50003010a5a")


def test_frame_layout_request():
    pkt = Packet(StreamType.CLIENT_REQUEST, 7, b"", req_seq=2)
    assert frame(pkt) == bytes.fromhex("a50107 02 00 5a".replace(" ", ""))


def test_frame_rejects_oversize_payload():
    with pytest.raises(mc.PayloadTooLong):
        frame(Packet(StreamType.PUBLISHER, 1, bytes(256)))
    frame(Packet(StreamType.PUBLISHER, 1, bytes(255)))


def test_packet_req_seq_rules():
    with pytest.raises(ValueError):
        Packet(StreamType.PUBLISHER, 1, b"", req_seq=0)
    with pytest.raises(ValueError):
        Packet(StreamType.CLIENT_REQUEST, 1, b"")
    with pytest.raises(ValueError):
        Packet(StreamType.PUBLISHER, 300, b"")


def test_deframe_two_frames_with_garbage():
    f1 = frame(Packet(StreamType.PUBLISHER, 3, b"\x01\x02"))
    f2 = frame(Packet(StreamType.SERVICE_RESPONSE, 9, b"\x05", req_seq=1))
    blob = b"\x00\xa5\xff" + f1 + b"\x99\x11\x22" + f2 + b"\x5a"
    packets, skipped = deframe(blob)
    assert [p.payload for p in packets] == [b"\x01\x02", b"\x05"]
    assert packets[1].req_seq == 1
    assert skipped == 7


def test_deframe_corrupted_end_byte():
    f1 = bytearray(frame(Packet(StreamType.PUBLISHER, 3, b"\x01\x02")))
    f1[-1] ^= 0xFF
    packets, skipped = deframe(bytes(f1))
    assert packets == []
    assert skipped == len(f1)


def test_deframe_empty_and_pure_garbage():
    assert deframe(b"") == ([], 0)
    packets, skipped = deframe(b"\xa5\xa5\xa5\x00")
    assert packets == [] and skipped == 4


def test_deframe_payload_containing_markers():
    # START/END values inside the payload must not confuse resync
    payload = bytes([0xA5, 0x5A, 0xA5, 0x00, 0x01])
    f = frame(Packet(StreamType.PUBLISHER, 2, payload))
    packets, skipped = deframe(b"\xa5" + f + b"\xa5")
    assert len(packets) == 1 and packets[0].payload == payload
    assert skipped == 2


@given(st.integers(0, 2), st.integers(0, 255), st.binary(max_size=40), st.integers(0, 255))
def test_frame_deframe_round_trip(stype, sid, payload, seq):
    stream_type = StreamType(stype)
    pkt = Packet(stream_type, sid, payload, None if stream_type == StreamType.PUBLISHER else seq)
    packets, skipped = deframe(frame(pkt))
    assert packets == [pkt] and skipped == 0


@given(st.lists(st.binary(max_size=12), min_size=1, max_size=4), st.binary(max_size=8))
def test_deframe_recovers_frames_between_garbage(payloads, junk):
    frames = [frame(Packet(StreamType.PUBLISHER, i, p)) for i, p in enumerate(payloads)]
    junk = junk.replace(bytes([mc.START_BYTE]), b"\x00")  # keep junk inert
    blob = junk + junk.join(frames) + junk
    packets, _ = deframe(blob)
    assert [p.payload for p in packets] == payloads


# --- registry ----------------------------------------------------------------


def test_registry_fixture(fixtures_dir):
    reg = StreamRegistry.from_file(fixtures_dir / "registry.json")
    assert reg.id_of("follower/data") == 3
    assert reg.id_of("buoy/trigger") == 1
    assert reg.id_of("leader/repos_cmd") == 2
    assert reg.name_of(2) == "leader/repos_cmd"
    assert reg.kind_of("follower/data") == "topic"


def test_registry_errors():
    with pytest.raises(mc.UnknownStream):
        StreamRegistry({"a": 1}).id_of("b")
    with pytest.raises(mc.UnknownStream):
        StreamRegistry({"a": 1}).name_of(9)
    with pytest.raises(ValueError):
        StreamRegistry({"a": 1, "b": 1})
    with pytest.raises(ValueError):
        StreamRegistry({"a": 1}, {"a": 2})
    with pytest.raises(ValueError):
        StreamRegistry({"a": 700})

import random
import struct
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pachyderm import codec
from pachyderm.codec import InstanceRecord
from pachyderm.errors import (
    DecodeError,
    DuplicateSlot,
    MalformedUtf8,
    NonCanonical,
    NonSerializable,
    TooDeep,
    Truncated,
    UnknownTag,
)
from pachyderm.values import Map, Opaque, Ref, Set, Symbol, value_equal

from conftest import KERNELS
from generators import random_value, rng_for
from reference_codec import ref_encode, ref_encode_record, uleb, zigzag
from strategies import values

# frozen byte images, hand-encoded from the format table
FROZEN = [
    (None, "00"),
    (False, "0100"),
    (True, "0101"),
    (0, "0200"),
    (-1, "0201"),
    (1, "0202"),
    (63, "027e"),
    (-64, "027f"),
    (64, "028001"),
    (-(1 << 63), "02ffffffffffffffffff01"),
    ((1 << 63) - 1, "02feffffffffffffffff01"),
    (1.0, "033ff0000000000000"),
    (-0.0, "038000000000000000"),
    ("ab", "04026162"),
    ("é", "0402c3a9"),
    (b"\x00\xff", "050200ff"),
    (Symbol("k"), "06016b"),
    ([], "0700"),
    ([1, "a"], "07020202040161"),
    (Map([("b", 1), ("a", 2)]), "0802040161020404016202" + "02"),
    (Set([2, 1]), "090202020204"),
    (Ref(99), "0a0000000000000063"),
]


@pytest.mark.parametrize("value,hexed", FROZEN, ids=[h for _, h in FROZEN])
def test_frozen_encodings(kernel, value, hexed):
    expected = bytes.fromhex(hexed)
    assert kernel.encode_value(value) == expected
    decoded, used = kernel.decode_value(expected, 0)
    assert used == len(expected)
    assert value_equal(decoded, value)


def test_reference_helpers_agree_with_hand_arithmetic():
    assert zigzag(0) == 0 and zigzag(-1) == 1 and zigzag(1) == 2 and zigzag(-2) == 3
    assert uleb(0) == b"\x00" and uleb(127) == b"\x7f" and uleb(128) == b"\x80\x01" and uleb(300) == b"\xac\x02"


def test_opaque_is_not_serializable():
    with pytest.raises(NonSerializable) as info:
        codec.encode_value([1, Opaque("file handle")])
    assert info.value.path == (1,)
    assert info.value.tag == "file handle"


def test_opaque_path_inside_map():
    with pytest.raises(NonSerializable) as info:
        codec.encode_value(Map([("k", [0, 0, Opaque("x")])]))
    assert info.value.path == ("k", 2)


def test_decode_examples(kernel):
    assert kernel.decode_value(b"\x00", 0) == (None, 1)
    with pytest.raises(UnknownTag) as info:
        kernel.decode_value(b"\xfe", 0)
    assert info.value.tag == 0xFE and info.value.offset == 0


def test_decode_at_offset_reports_absolute_offsets(kernel):
    buf = b"\x00\x00" + b"\x07\x01\xfe"
    with pytest.raises(UnknownTag) as info:
        kernel.decode_value(buf, 2)
    assert info.value.offset == 4


@pytest.mark.parametrize(
    "hexed,error",
    [
        ("", Truncated),
        ("02", Truncated),
        ("0280", Truncated),
        ("0405616263", Truncated),
        ("03000000", Truncated),
        ("0a00000000", Truncated),
        ("0702 00", Truncated),
        ("0402c328", MalformedUtf8),
        ("0601ff", MalformedUtf8),
        ("0102", NonCanonical),  # bool payload must be 0 or 1
        ("028000", NonCanonical),  # overlong varint
        ("04800000", NonCanonical),  # overlong length prefix
        ("0802 0202 00 0200 00", NonCanonical),  # keys out of order
        ("0802 0200 00 0200 00", NonCanonical),  # duplicate key
        ("0902 0202 0200", NonCanonical),  # members out of order
        ("0901 0700", NonCanonical),  # composite set member
        ("0801 0a0000000000000001 00", NonCanonical),  # ref as key
        ("0a0000000000000000", NonCanonical),  # oid 0
        ("0b", UnknownTag),
        ("ff", UnknownTag),
        ("02ffffffffffffffffff7f", NonCanonical),  # beyond 64 bits
    ],
)
def test_decode_errors(kernel, hexed, error):
    with pytest.raises(error):
        kernel.decode_value(bytes.fromhex(hexed.replace(" ", "")), 0)


def test_decode_error_classes_are_decode_errors():
    for cls in (Truncated, MalformedUtf8, NonCanonical, UnknownTag, TooDeep, DuplicateSlot):
        assert issubclass(cls, DecodeError)


def test_depth_limit(kernel):
    deep = b"\x07\x01" * (kernel.MAX_DEPTH + 1) + b"\x00"
    with pytest.raises(TooDeep):
        kernel.decode_value(deep, 0)
    ok = b"\x07\x01" * (kernel.MAX_DEPTH - 1) + b"\x00"
    assert kernel.decode_value(ok, 0)[1] == len(ok)


def test_deep_values_do_not_overflow_the_stack(kernel):
    v = None
    for _ in range(kernel.MAX_DEPTH + 5):
        v = [v]
    with pytest.raises((TooDeep, ValueError)):
        kernel.encode_value(v)


def test_decode_exact_rejects_trailing_bytes():
    with pytest.raises(NonCanonical):
        codec.decode_exact(b"\x00\x00")


# -- records -------------------------------------------------------------------


def test_empty_record_layout(kernel):
    blob = kernel.encode_record(1, "point", 1, {})
    assert blob == bytes.fromhex("0000000000000001") + b"\x05point" + b"\x01" + b"\x00"


def test_record_slots_in_name_order(kernel):
    blob = kernel.encode_record(7, "point", 2, {"y": 2, "x": 1})
    expected = bytes.fromhex("0000000000000007") + b"\x05point\x02\x02" + b"\x01x\x02\x02" + b"\x01y\x02\x04"
    assert blob == expected
    assert blob == ref_encode_record(7, "point", 2, {"y": 2, "x": 1})


def test_record_ref_is_not_inlined():
    blob = codec.encode_record(InstanceRecord(1, "n", 1, {"next": Ref(99)}))
    assert blob.endswith(b"\x04next\x0a" + struct.pack(">Q", 99))


def test_record_round_trip_examples():
    r = InstanceRecord(42, "photo", 3, {"filename": "1.jpg", "tags": Set([Symbol("cat")]), "up": Ref(5)})
    back = codec.decode_record(codec.encode_record(r))
    assert (back.oid, back.class_name, back.version) == (42, "photo", 3)
    assert back.slots.keys() == r.slots.keys()
    assert all(value_equal(back.slots[k], r.slots[k]) for k in r.slots)
    assert codec.decode_record_header(codec.encode_record(r)) == (42, "photo", 3)


def test_record_duplicate_slot(kernel):
    blob = bytes.fromhex("0000000000000001") + b"\x01p\x01\x02" + b"\x01a\x00" + b"\x01a\x00"
    with pytest.raises(DuplicateSlot):
        kernel.decode_record(blob, 0)


def test_record_slots_out_of_order(kernel):
    blob = bytes.fromhex("0000000000000001") + b"\x01p\x01\x02" + b"\x01b\x00" + b"\x01a\x00"
    with pytest.raises(NonCanonical):
        kernel.decode_record(blob, 0)


def test_record_truncated(kernel):
    blob = kernel.encode_record(3, "point", 1, {"x": 1, "y": "long text"})
    for cut in range(len(blob)):
        with pytest.raises(Truncated):
            kernel.decode_record(blob[:cut], 0)


def test_record_opaque_path():
    with pytest.raises(NonSerializable) as info:
        codec.encode_record(InstanceRecord(1, "c", 1, {"h": [Opaque("fd")]}))
    assert info.value.path == (".h", 0)


# -- properties ------------------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(values)
def test_round_trip_and_canonicity(v):
    blob = codec.encode_value(v)
    back, used = codec.decode_value(blob)
    assert used == len(blob)
    assert value_equal(back, v)
    assert codec.encode_value(back) == blob


@settings(max_examples=300, deadline=None)
@given(values)
def test_matches_reference_encoder(v):
    expected = ref_encode(v)
    for k in KERNELS:
        assert k.encode_value(v) == expected


@settings(max_examples=100, deadline=None)
@given(st.lists(values, min_size=1, max_size=6))
def test_prefix_property(vs):
    blob = b"".join(codec.encode_value(v) for v in vs)
    pos = 0
    for v in vs:
        back, used = codec.decode_value(blob, pos)
        assert value_equal(back, v)
        pos += used
    assert pos == len(blob)


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=8), values, max_size=6), st.integers(1, (1 << 64) - 1))
def test_record_round_trip_property(slots, oid):
    r = InstanceRecord(oid, "cls", 1, slots)
    blob = codec.encode_record(r)
    assert blob == ref_encode_record(oid, "cls", 1, slots)
    back = codec.decode_record(blob)
    assert back.slots.keys() == slots.keys()
    assert all(value_equal(back.slots[k], slots[k]) for k in slots)


def _outcome(k, data):
    try:
        v, used = k.decode_value(data, 0)
    except DecodeError as exc:
        return ("error", type(exc).__name__, exc.offset)
    return ("ok", k.encode_value(v), used)


def test_kernels_agree_on_fuzzed_input():
    if len(KERNELS) < 2:
        pytest.skip("compiled kernel not built")
    py, cy = KERNELS
    rng = random.Random(11)
    seeds = [py.encode_value(random_value(rng, max_nodes=40)) for _ in range(300)]
    for blob in seeds:
        for _ in range(5):
            mutated = bytearray(blob)
            op = rng.randrange(3)
            if op == 0 and mutated:
                mutated[rng.randrange(len(mutated))] = rng.randrange(256)
            elif op == 1 and mutated:
                del mutated[rng.randrange(len(mutated)):]
            else:
                mutated.insert(rng.randrange(len(mutated) + 1), rng.randrange(256))
            data = bytes(mutated)
            a, b = _outcome(py, data), _outcome(cy, data)
            assert a == b, data.hex()
            if a[0] == "ok":
                # whatever decodes, decodes canonically
                assert a[1] == data[: a[2]]


def test_random_garbage_only_raises_decode_errors(kernel):
    rng = random.Random(5)
    for _ in range(3000):
        data = rng.randbytes(rng.randint(0, 24))
        try:
            kernel.decode_value(data, 0)
        except DecodeError:
            pass


def test_kernels_produce_identical_bytes():
    rng = rng_for(3)
    for _ in range(500):
        v = random_value(rng, max_nodes=200)
        outputs = {k.encode_value(v) for k in KERNELS}
        assert len(outputs) == 1


def _payload(target_bytes):
    rng = random.Random(target_bytes)
    items, size = [], 2
    while size < target_bytes:
        v = [rng.randint(-(1 << 40), 1 << 40), "x" * rng.randint(0, 12), rng.random()]
        items.append(v)
        size += len(codec.encode_value(v))
    return codec.encode_value(items)


def test_decode_time_scales_linearly():
    per_byte = []
    for exp in (10, 12, 14, 16, 18, 20):
        blob = _payload(1 << exp)
        reps = max(1, (1 << 21) // len(blob))
        best = float("inf")
        for _ in range(5):
            t0 = time.perf_counter()
            for _ in range(reps):
                codec.decode_value(blob)
            best = min(best, (time.perf_counter() - t0) / reps)
        per_byte.append(best / len(blob))
    assert max(per_byte) / min(per_byte) < 4.0, per_byte

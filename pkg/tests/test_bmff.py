import hashlib
import struct
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mediaprov.bmff import (
    Box,
    Fragment,
    InitSegment,
    Kind,
    MediaObject,
    attach_provenance_box,
    concat_objects,
    parse_media,
    read_provenance_box,
    remux_monolithic,
    serialize_media,
    slice_fragments,
    strip_container_metadata,
)
from mediaprov.binding import hash_fragment
from mediaprov.errors import InvariantViolation, MalformedBox, RangeOutOfBounds, TruncatedInput

from scenarios import broadcast

CONTAINERS = {b"init", b"frag"}


def walk(data: bytes, start=0, end=None, depth=0):
    """Independent box walker: (depth, type, offset, size) for every box."""
    end = len(data) if end is None else end
    out, pos = [], start
    while pos < end:
        size, kind = struct.unpack_from(">I4s", data, pos)
        header = 8
        if size == 1:
            (size,) = struct.unpack_from(">Q", data, pos + 8)
            header = 16
        assert size >= header and pos + size <= end, "box overruns its parent"
        out.append((depth, kind, pos, size))
        if kind in CONTAINERS and depth == 0:
            out.extend(walk(data, pos + header, pos + size, depth + 1))
        pos += size
    assert pos == end, "boxes do not tile the parent"
    return out


def small_object(n_frags=3, constant_audio=True, prov=False):
    # 388 audio ticks at 4850 Hz and two 3600-tick frames at 90 kHz both last 80 ms
    inits = (InitSegment(1, 4850, "pcm "), InitSegment(2, 90000, "vblb"))
    frags = []
    for i in range(n_frags):
        audio = bytes(range(256)) * 3 + bytes(8)  # 776 bytes = 388 samples of 2 bytes
        frags.append(Fragment(1, i + 1, i * 388, 388, 1, audio, None if constant_audio else (2,) * 388))
        frags.append(Fragment(2, i + 1, i * 7200, 2, 3600,
                              b"v" * 50 + b"w" * 70, (50, 70)))
    obj = MediaObject(Kind.FRAGMENTED, inits, tuple(frags))
    if prov:
        obj = replace(obj, fragments=tuple(attach_provenance_box(f, b"proof") for f in obj.fragments))
    return obj


@pytest.fixture(scope="module")
def replica():
    _, stream = broadcast(42, duration=30.0, seed=9)
    return stream[0].replica


def test_replica_fixture_matches_independent_walk(replica):
    data = serialize_media(replica)
    boxes = walk(data)
    top = [b for b in boxes if b[0] == 0]
    assert [b[1] for b in top][:3] == [b"ftyp", b"init", b"init"]
    assert sum(b[3] for b in top) == len(data)
    assert sum(1 for b in top if b[1] == b"frag") == 30
    per_track = {}
    for depth, kind, pos, size in boxes:
        if kind == b"tfhd":
            (tid,) = struct.unpack_from(">I", data, pos + 8)
            per_track[tid] = per_track.get(tid, 0) + 1
    assert per_track == {1: 15, 2: 15}
    parsed = parse_media(data)
    assert len(parsed.init_segments) == 2
    assert all(len(parsed.fragments_for(t)) == 15 for t in (1, 2))


def test_round_trip_and_determinism(replica):
    data = serialize_media(replica)
    assert serialize_media(replica) == data
    assert parse_media(data) == replica


def test_init_only_object():
    obj = MediaObject(Kind.FRAGMENTED, (InitSegment(1, 48000, "pcm "),), ())
    data = serialize_media(obj)
    assert [b[1] for b in walk(data) if b[0] == 0] == [b"ftyp", b"init"]
    assert parse_media(data) == obj


def test_declared_size_past_end_is_malformed(replica):
    data = bytearray(serialize_media(replica))
    last_frag = [b for b in walk(bytes(data)) if b[0] == 0][-1]
    struct.pack_into(">I", data, last_frag[2], last_frag[3] + 1)
    with pytest.raises(MalformedBox):
        parse_media(bytes(data))
    with pytest.raises(TruncatedInput):
        parse_media(serialize_media(replica)[:-1])


def test_large_size_header_accepted():
    obj = small_object(1)
    data = serialize_media(obj)
    boxes = [b for b in walk(data) if b[0] == 0]
    # re-emit the init box with a 64-bit size header
    _, _, pos, size = boxes[1]
    body = data[pos + 8 : pos + size]
    big = struct.pack(">I4sQ", 1, b"init", size + 8) + body
    patched = data[:pos] + big + data[pos + size :]
    assert parse_media(patched) == obj


def test_unknown_boxes_survive():
    obj = small_object(2)
    f0 = replace(obj.fragments[0], extra=(Box("xtra", b"\x00\x01"),))
    obj = replace(obj, fragments=(f0,) + obj.fragments[1:], extra=(Box("free", b"pad"),))
    assert parse_media(serialize_media(obj)) == obj


def test_strip_is_idempotent_and_removes_provenance(replica):
    stripped = strip_container_metadata(replica)
    assert stripped.container_manifest is None
    assert all(f.provenance is None for f in stripped.fragments)
    assert all(i.provenance is None for i in stripped.init_segments)
    assert strip_container_metadata(stripped) == stripped
    plain = small_object()
    assert strip_container_metadata(plain) == plain


def test_provenance_attach_read_replace():
    f = small_object(1).fragments[0]
    a = attach_provenance_box(f, b"first")
    assert read_provenance_box(a) == b"first"
    b = attach_provenance_box(a, b"second")
    assert read_provenance_box(b) == b"second"
    assert sum(1 for x in walk(serialize_media(small_object(1))) if x[1] == b"prov") == 0


def test_provenance_does_not_change_essence_hash(replica):
    for f in replica.fragments:
        bare = replace(f, provenance=None)
        assert hashlib.sha256(bare.sample_data).digest() == hashlib.sha256(f.sample_data).digest()
        assert hash_fragment(bare) == hash_fragment(f)


def test_slice_rules(replica):
    full = slice_fragments(replica, 0, replica.duration)
    assert full.fragments == replica.fragments
    # 3.0 s lies inside the second 2 s fragment
    part = slice_fragments(replica, 3.0, 5.0)
    assert [f.sequence_number for f in part.fragments_for(1)] == [2, 3]
    with pytest.raises(RangeOutOfBounds):
        slice_fragments(replica, 10, 40)


def test_thirty_minute_slice_selects_fragments_300_to_309():
    # timing-only fixture: 900 two-second fragments per track
    inits = (InitSegment(1, 48000, "pcm "), InitSegment(2, 90000, "vblb"))
    frags = []
    for i in range(900):
        frags.append(Fragment(1, i, i * 96000, 96000, 1, bytes(96000)))
        frags.append(Fragment(2, i, i * 180000, 50, 3600, bytes(50)))
    obj = MediaObject(Kind.FRAGMENTED, inits, tuple(frags))
    part = slice_fragments(obj, 600.0, 620.0)
    # independent arithmetic: fragment k covers [2k, 2k + 2)
    expected = [k for k in range(900) if 2 * k < 620.0 and 2 * k + 2 > 600.0]
    assert expected == list(range(300, 310))
    for tid in (1, 2):
        assert [f.sequence_number for f in part.fragments_for(tid)] == expected


def test_remux_and_concat(replica):
    mono = remux_monolithic(replica)
    assert mono.kind is Kind.MONOLITHIC
    assert mono.start_time == 0
    assert mono.essence(1) == replica.essence(1)
    assert mono.fragments_for(2)[0].sample_sizes == tuple(s for f in replica.fragments_for(2) for s in f.sizes())
    with pytest.raises(InvariantViolation):
        concat_objects([replica, replica])


def test_invariants_enforced():
    with pytest.raises(InvariantViolation):
        Fragment(1, 1, 0, 3, 1, b"\x00" * 7)
    with pytest.raises(InvariantViolation):
        InitSegment(1, 0, "pcm ")
    obj = small_object(2)
    swapped = replace(obj, fragments=(obj.fragments[2], obj.fragments[1], obj.fragments[0], obj.fragments[3]))
    with pytest.raises(InvariantViolation):
        serialize_media(swapped)


@st.composite
def media_objects(draw):
    n_tracks = draw(st.integers(1, 3))
    timescale = draw(st.integers(1, 96000))
    inits = []
    for t in range(1, n_tracks + 1):
        prov = draw(st.one_of(st.none(), st.binary(min_size=1, max_size=16)))
        inits.append(InitSegment(t, timescale, draw(st.sampled_from(["pcm ", "vblb", "abcd"])), prov))
    n_frags = draw(st.integers(0, 4))
    frags = []
    for t in range(1, n_tracks + 1):
        dur = 10
        for k in range(n_frags):
            count = 1 if n_frags == 0 else 2
            if draw(st.booleans()):
                sizes = tuple(draw(st.lists(st.integers(0, 20), min_size=count, max_size=count)))
                data = draw(st.binary(min_size=sum(sizes), max_size=sum(sizes)))
            else:
                sizes = None
                data = draw(st.binary(min_size=count * 3, max_size=count * 3))
            prov = draw(st.one_of(st.none(), st.binary(min_size=1, max_size=16)))
            frags.append(Fragment(t, k + 1, k * count * dur, count, dur, data, sizes, prov))
    # align tracks in time by interleaving per index
    frags.sort(key=lambda f: (f.base_media_decode_time, f.track_id))
    kind = Kind.FRAGMENTED
    return MediaObject(kind, tuple(inits), tuple(frags))


@settings(max_examples=200, deadline=None)
@given(media_objects())
def test_round_trip_property(obj):
    data = serialize_media(obj)
    assert parse_media(data) == obj
    assert sum(b[3] for b in walk(data) if b[0] == 0) == len(data)

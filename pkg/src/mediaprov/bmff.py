"""Minimal ISOBMFF-style container layer (the PMF4 box grammar).

Every box is ``size:u32 | type:4cc | payload`` with ``size == 1`` switching
to a trailing ``u64`` large size.  A PMF4 file is::

    ftyp   major brand "PMF4", minor version, kind brand ("frag" | "mono")
    init*  one per track: tkhd [unknown...] [prov]
    frag*  mfhd tfhd tfdt trun mdat [unknown...] [prov]
    ...    unknown top-level boxes, preserved opaquely
    pmst   optional container-level manifest store, always last

See docs/formats.md for the field layouts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .errors import InvariantViolation, MalformedBox, RangeOutOfBounds, TruncatedInput

BRAND = b"PMF4"
FORMAT_VERSION = 1
PROVENANCE_BOX = "prov"
MANIFEST_STORE_BOX = "pmst"

AUDIO_CODEC = "pcm "
VIDEO_CODEC = "vblb"

_U32_MAX = 0xFFFFFFFF


# ---------------------------------------------------------------------------
# generic boxes


@dataclass(frozen=True)
class Box:
    box_type: str
    payload: bytes = b""
    children: tuple["Box", ...] | None = None

    def __post_init__(self):
        if len(self.box_type.encode("latin-1")) != 4:
            raise InvariantViolation(f"box type must be a 4cc: {self.box_type!r}")

    @property
    def body(self) -> bytes:
        if self.children is None:
            return self.payload
        return b"".join(c.to_bytes() for c in self.children)

    @property
    def size(self) -> int:
        return len(self.to_bytes())

    def to_bytes(self) -> bytes:
        return encode_box(self.box_type, self.body)


def encode_box(box_type: str, body: bytes) -> bytes:
    fourcc = box_type.encode("latin-1")
    total = 8 + len(body)
    if total <= _U32_MAX:
        return struct.pack(">I4s", total, fourcc) + body
    return struct.pack(">I4sQ", 1, fourcc, total + 8) + body


@dataclass(frozen=True)
class BoxSpan:
    box_type: str
    start: int
    header_size: int
    end: int

    @property
    def body_start(self) -> int:
        return self.start + self.header_size

    @property
    def size(self) -> int:
        return self.end - self.start


def iter_boxes(data: bytes | memoryview, start: int = 0, end: int | None = None) -> Iterator[BoxSpan]:
    """Walk sibling boxes in ``data[start:end]``; the boxes must tile the range."""
    end = len(data) if end is None else end
    pos = start
    while pos < end:
        if end - pos < 8:
            raise TruncatedInput(f"box header at offset {pos} is truncated")
        size, fourcc = struct.unpack_from(">I4s", data, pos)
        header = 8
        if size == 1:
            if end - pos < 16:
                raise TruncatedInput(f"large-size header at offset {pos} is truncated")
            (size,) = struct.unpack_from(">Q", data, pos + 8)
            header = 16
        if size < header:
            raise MalformedBox(f"box at offset {pos} declares size {size} smaller than its header")
        if pos + size > end:
            raise TruncatedInput(
                f"box {fourcc!r} at offset {pos} declares {size} bytes but only {end - pos} remain"
            )
        yield BoxSpan(fourcc.decode("latin-1"), pos, header, pos + size)
        pos += size


def parse_boxes(data: bytes, containers: Iterable[str] = ()) -> tuple[Box, ...]:
    containers = frozenset(containers)

    def walk(start: int, end: int) -> tuple[Box, ...]:
        out = []
        for span in iter_boxes(data, start, end):
            if span.box_type in containers:
                out.append(Box(span.box_type, children=walk(span.body_start, span.end)))
            else:
                out.append(Box(span.box_type, bytes(data[span.body_start : span.end])))
        return tuple(out)

    return walk(0, len(data))


# ---------------------------------------------------------------------------
# media model


class Kind(str, Enum):
    FRAGMENTED = "fragmented"
    MONOLITHIC = "monolithic"


_KIND_BRANDS = {Kind.FRAGMENTED: b"frag", Kind.MONOLITHIC: b"mono"}


@dataclass(frozen=True)
class InitSegment:
    track_id: int
    timescale: int
    codec: str
    provenance: bytes | None = None
    extra: tuple[Box, ...] = ()

    def __post_init__(self):
        if self.timescale <= 0:
            raise InvariantViolation("timescale must be positive")
        if len(self.codec.encode("latin-1")) != 4:
            raise InvariantViolation(f"codec tag must be a 4cc: {self.codec!r}")


@dataclass(frozen=True)
class Fragment:
    track_id: int
    sequence_number: int
    base_media_decode_time: int
    sample_count: int
    sample_duration: int
    sample_data: bytes = field(repr=False)
    # None means every sample has size len(sample_data) / sample_count
    sample_sizes: tuple[int, ...] | None = field(default=None, repr=False)
    provenance: bytes | None = field(default=None, repr=False)
    extra: tuple[Box, ...] = ()

    def __post_init__(self):
        if self.sample_count <= 0 or self.sample_duration <= 0:
            raise InvariantViolation("a fragment needs at least one sample of positive duration")
        if self.sample_sizes is None:
            if len(self.sample_data) % self.sample_count:
                raise InvariantViolation("constant-size samples do not divide the sample data")
        else:
            if len(self.sample_sizes) != self.sample_count:
                raise InvariantViolation("sample size table length differs from sample count")
            if sum(self.sample_sizes) != len(self.sample_data):
                raise InvariantViolation("sample sizes do not add up to the sample data length")

    @property
    def duration(self) -> int:
        return self.sample_count * self.sample_duration

    @property
    def end_time(self) -> int:
        return self.base_media_decode_time + self.duration

    def sizes(self) -> list[int]:
        if self.sample_sizes is not None:
            return list(self.sample_sizes)
        return [len(self.sample_data) // self.sample_count] * self.sample_count


@dataclass(frozen=True)
class MediaObject:
    kind: Kind
    init_segments: tuple[InitSegment, ...]
    fragments: tuple[Fragment, ...]
    container_manifest: bytes | None = field(default=None, repr=False)
    extra: tuple[Box, ...] = ()

    @property
    def track_ids(self) -> list[int]:
        return [i.track_id for i in self.init_segments]

    def init_for(self, track_id: int) -> InitSegment:
        for init in self.init_segments:
            if init.track_id == track_id:
                return init
        raise KeyError(track_id)

    def fragments_for(self, track_id: int) -> list[Fragment]:
        return [f for f in self.fragments if f.track_id == track_id]

    def track_span(self, track_id: int) -> tuple[float, float]:
        frags = self.fragments_for(track_id)
        if not frags:
            return (0.0, 0.0)
        ts = self.init_for(track_id).timescale
        return frags[0].base_media_decode_time / ts, frags[-1].end_time / ts

    @property
    def start_time(self) -> float:
        spans = [self.track_span(t) for t in self.track_ids if self.fragments_for(t)]
        return min((s for s, _ in spans), default=0.0)

    @property
    def end_time(self) -> float:
        spans = [self.track_span(t) for t in self.track_ids if self.fragments_for(t)]
        return max((e for _, e in spans), default=0.0)

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    def essence(self, track_id: int | None = None) -> bytes:
        frags = self.fragments if track_id is None else self.fragments_for(track_id)
        return b"".join(f.sample_data for f in frags)

    def audio_track_id(self) -> int | None:
        for init in self.init_segments:
            if init.codec == AUDIO_CODEC:
                return init.track_id
        return None


def check_invariants(obj: MediaObject) -> None:
    ids = obj.track_ids
    if len(set(ids)) != len(ids):
        raise InvariantViolation("duplicate track ids in init segments")
    if obj.kind is Kind.FRAGMENTED and not obj.init_segments:
        raise InvariantViolation("a fragmented object needs at least one init segment")
    known = set(ids)
    for frag in obj.fragments:
        if frag.track_id not in known:
            raise InvariantViolation(f"fragment for unknown track {frag.track_id}")
    max_frag = 0.0
    for tid in ids:
        frags = obj.fragments_for(tid)
        if obj.kind is Kind.MONOLITHIC and len(frags) != 1:
            raise InvariantViolation(f"monolithic track {tid} must have one essence region, has {len(frags)}")
        for a, b in zip(frags, frags[1:]):
            if b.sequence_number <= a.sequence_number:
                raise InvariantViolation(f"sequence numbers not increasing on track {tid}")
            if b.base_media_decode_time != a.end_time:
                raise InvariantViolation(f"decode time discontinuity on track {tid} at seq {b.sequence_number}")
        ts = obj.init_for(tid).timescale
        max_frag = max([max_frag] + [f.duration / ts for f in frags])
    spans = [obj.track_span(t) for t in ids if obj.fragments_for(t)]
    if spans and obj.kind is Kind.FRAGMENTED:
        tol = max_frag + 1e-9
        if max(s for s, _ in spans) - min(s for s, _ in spans) > tol or (
            max(e for _, e in spans) - min(e for _, e in spans) > tol
        ):
            raise InvariantViolation("tracks do not cover the same media span")


# ---------------------------------------------------------------------------
# serialization


def _init_box(init: InitSegment) -> Box:
    children = [Box("tkhd", struct.pack(">II4s", init.track_id, init.timescale, init.codec.encode("latin-1")))]
    children.extend(init.extra)
    if init.provenance is not None:
        children.append(Box(PROVENANCE_BOX, init.provenance))
    return Box("init", children=tuple(children))


def _frag_box(frag: Fragment) -> Box:
    if frag.sample_sizes is None:
        trun = struct.pack(">IIII", 0, frag.sample_count, frag.sample_duration, len(frag.sample_data) // frag.sample_count)
    else:
        trun = struct.pack(f">III{frag.sample_count}I", 1, frag.sample_count, frag.sample_duration, *frag.sample_sizes)
    children = [
        Box("mfhd", struct.pack(">I", frag.sequence_number)),
        Box("tfhd", struct.pack(">I", frag.track_id)),
        Box("tfdt", struct.pack(">Q", frag.base_media_decode_time)),
        Box("trun", trun),
        Box("mdat", frag.sample_data),
        *frag.extra,
    ]
    if frag.provenance is not None:
        children.append(Box(PROVENANCE_BOX, frag.provenance))
    return Box("frag", children=tuple(children))


def serialize_init(init: InitSegment) -> bytes:
    return _init_box(init).to_bytes()


def serialize_fragment(frag: Fragment) -> bytes:
    return _frag_box(frag).to_bytes()


def serialize_media(obj: MediaObject) -> bytes:
    check_invariants(obj)
    ftyp = BRAND + struct.pack(">I", FORMAT_VERSION) + _KIND_BRANDS[obj.kind]
    parts = [encode_box("ftyp", ftyp)]
    parts.extend(serialize_init(i) for i in obj.init_segments)
    parts.extend(serialize_fragment(f) for f in obj.fragments)
    parts.extend(b.to_bytes() for b in obj.extra)
    if obj.container_manifest is not None:
        parts.append(encode_box(MANIFEST_STORE_BOX, _store_body(obj.container_manifest)))
    return b"".join(parts)


def _store_body(store_bytes: bytes) -> bytes:
    # container_manifest holds a complete pmst box; re-emit its body under our header
    spans = list(iter_boxes(store_bytes))
    if len(spans) != 1 or spans[0].box_type != MANIFEST_STORE_BOX:
        raise InvariantViolation("container manifest must be a single pmst box")
    return bytes(store_bytes[spans[0].body_start :])


# ---------------------------------------------------------------------------
# parsing


def _parse_init(data: bytes, span: BoxSpan) -> InitSegment:
    kids = list(iter_boxes(data, span.body_start, span.end))
    if not kids or kids[0].box_type != "tkhd" or kids[0].end - kids[0].body_start != 12:
        raise MalformedBox("init box must start with a 12-byte tkhd")
    track_id, timescale, codec = struct.unpack_from(">II4s", data, kids[0].body_start)
    prov, extra = _split_tail(data, kids[1:])
    try:
        return InitSegment(track_id, timescale, codec.decode("latin-1"), prov, extra)
    except InvariantViolation as exc:
        raise MalformedBox(str(exc)) from exc


def _split_tail(data: bytes, kids: Sequence[BoxSpan]) -> tuple[bytes | None, tuple[Box, ...]]:
    prov = None
    extra = []
    for i, k in enumerate(kids):
        body = bytes(data[k.body_start : k.end])
        if k.box_type == PROVENANCE_BOX:
            if i != len(kids) - 1:
                raise MalformedBox("provenance box must be the last child")
            prov = body
        else:
            extra.append(Box(k.box_type, body))
    return prov, tuple(extra)


_FRAG_HEAD = ("mfhd", "tfhd", "tfdt", "trun", "mdat")


def _parse_frag(data: bytes, span: BoxSpan) -> Fragment:
    kids = list(iter_boxes(data, span.body_start, span.end))
    if [k.box_type for k in kids[:5]] != list(_FRAG_HEAD):
        raise MalformedBox(f"frag at offset {span.start} lacks mfhd/tfhd/tfdt/trun/mdat header boxes")
    mfhd, tfhd, tfdt, trun, mdat = kids[:5]
    try:
        (seq,) = struct.unpack_from(">I", data, mfhd.body_start)
        (track_id,) = struct.unpack_from(">I", data, tfhd.body_start)
        (bmdt,) = struct.unpack_from(">Q", data, tfdt.body_start)
        flags, count, sample_duration = struct.unpack_from(">III", data, trun.body_start)
        if flags & 1:
            if trun.end - trun.body_start != 12 + 4 * count:
                raise MalformedBox("trun sample table length mismatch")
            sizes = struct.unpack_from(f">{count}I", data, trun.body_start + 12)
        else:
            sizes = None
    except struct.error as exc:
        raise MalformedBox(f"short field in frag at offset {span.start}") from exc
    prov, extra = _split_tail(data, kids[5:])
    try:
        return Fragment(track_id, seq, bmdt, count, sample_duration, bytes(data[mdat.body_start : mdat.end]), sizes, prov, extra)
    except InvariantViolation as exc:
        raise MalformedBox(str(exc)) from exc


def parse_media(data: bytes) -> MediaObject:
    if not data:
        raise TruncatedInput("empty input")
    data = bytes(data)
    spans = list(iter_boxes(data))
    if spans[0].box_type != "ftyp":
        raise MalformedBox("first box must be ftyp")
    ftyp = data[spans[0].body_start : spans[0].end]
    if len(ftyp) != 12 or ftyp[:4] != BRAND:
        raise MalformedBox("ftyp does not carry the PMF4 brand")
    brand = ftyp[8:12]
    kinds = {v: k for k, v in _KIND_BRANDS.items()}
    if brand not in kinds:
        raise MalformedBox(f"unknown kind brand {brand!r}")
    inits, frags, extra = [], [], []
    manifest = None
    for i, span in enumerate(spans[1:], start=1):
        if span.box_type == "init":
            inits.append(_parse_init(data, span))
        elif span.box_type == "frag":
            frags.append(_parse_frag(data, span))
        elif span.box_type == MANIFEST_STORE_BOX:
            if i != len(spans) - 1:
                raise MalformedBox("container manifest store must be the last box")
            manifest = data[span.start : span.end]
        else:
            extra.append(Box(span.box_type, data[span.body_start : span.end]))
    obj = MediaObject(kinds[brand], tuple(inits), tuple(frags), manifest, tuple(extra))
    try:
        check_invariants(obj)
    except InvariantViolation as exc:
        raise MalformedBox(str(exc)) from exc
    return obj


# ---------------------------------------------------------------------------
# transforms


def attach_provenance_box(target, payload: bytes):
    """Return a copy of an InitSegment or Fragment carrying ``payload`` in its prov box."""
    if not payload:
        raise InvariantViolation("provenance payload must be non-empty")
    return replace(target, provenance=bytes(payload))


def read_provenance_box(target) -> bytes | None:
    return target.provenance


def strip_container_metadata(obj: MediaObject) -> MediaObject:
    return replace(
        obj,
        container_manifest=None,
        init_segments=tuple(replace(i, provenance=None) for i in obj.init_segments),
        fragments=tuple(replace(f, provenance=None) for f in obj.fragments),
    )


def slice_fragments(obj: MediaObject, start_time: float, end_time: float) -> MediaObject:
    """Keep every fragment intersecting ``[start_time, end_time)``.

    Times are seconds relative to the object's first decode time.  Fragments
    are never cut, so the result may be longer than requested.
    """
    eps = 1e-9
    if not (0 <= start_time < end_time <= obj.duration + eps):
        raise RangeOutOfBounds(f"[{start_time}, {end_time}) outside object of duration {obj.duration}")
    origin = obj.start_time
    lo, hi = origin + start_time, origin + end_time
    keep = []
    for frag in obj.fragments:
        ts = obj.init_for(frag.track_id).timescale
        f0, f1 = frag.base_media_decode_time / ts, frag.end_time / ts
        if f0 < hi - eps and f1 > lo + eps:
            keep.append(frag)
    return replace(obj, fragments=tuple(keep))


def remux_monolithic(obj: MediaObject, rebase: bool = True) -> MediaObject:
    """Re-containerize as one essence region per track with no provenance.

    With ``rebase`` the decode times restart at zero, as a capture device would
    produce; the essence bytes are untouched.
    """
    stripped = strip_container_metadata(obj)
    merged = []
    for tid in stripped.track_ids:
        frags = stripped.fragments_for(tid)
        if not frags:
            continue
        durations = {f.sample_duration for f in frags}
        if len(durations) != 1:
            raise InvariantViolation(f"track {tid} mixes sample durations; cannot remux")
        sizes: list[int] = []
        constant = all(f.sample_sizes is None for f in frags) and len({f.sizes()[0] for f in frags}) == 1
        if not constant:
            for f in frags:
                sizes.extend(f.sizes())
        merged.append(
            Fragment(
                tid,
                1,
                0 if rebase else frags[0].base_media_decode_time,
                sum(f.sample_count for f in frags),
                frags[0].sample_duration,
                b"".join(f.sample_data for f in frags),
                None if constant else tuple(sizes),
            )
        )
    return MediaObject(Kind.MONOLITHIC, stripped.init_segments, tuple(merged))


def concat_objects(objs: Sequence[MediaObject]) -> MediaObject:
    """Join fragmented objects that continue each other on every track."""
    if not objs:
        raise InvariantViolation("nothing to concatenate")
    frags = []
    for o in objs:
        frags.extend(o.fragments)
    order = {tid: i for i, tid in enumerate(objs[0].track_ids)}
    frags.sort(key=lambda f: (f.base_media_decode_time / objs[0].init_for(f.track_id).timescale, order[f.track_id]))
    out = MediaObject(Kind.FRAGMENTED, objs[0].init_segments, tuple(frags))
    check_invariants(out)
    return out


# ---------------------------------------------------------------------------
# per-track essence views


@dataclass(frozen=True)
class TrackEssence:
    """Flat view of one track: a sample table plus contiguous essence bytes."""

    track_id: int
    timescale: int
    sample_duration: int
    sizes: tuple[int, ...]
    data: bytes = field(repr=False)
    start_ticks: int = 0

    @classmethod
    def of(cls, obj: MediaObject, track_id: int) -> "TrackEssence":
        frags = obj.fragments_for(track_id)
        if not frags:
            raise InvariantViolation(f"track {track_id} has no essence")
        durations = {f.sample_duration for f in frags}
        if len(durations) != 1:
            raise InvariantViolation(f"track {track_id} mixes sample durations")
        sizes: list[int] = []
        for f in frags:
            sizes.extend(f.sizes())
        return cls(
            track_id,
            obj.init_for(track_id).timescale,
            frags[0].sample_duration,
            tuple(sizes),
            b"".join(f.sample_data for f in frags),
            frags[0].base_media_decode_time,
        )

    @property
    def sample_count(self) -> int:
        return len(self.sizes)

    @property
    def duration_seconds(self) -> float:
        return self.sample_count * self.sample_duration / self.timescale

    def sample_index(self, seconds: float) -> int | None:
        """Index of the sample starting exactly ``seconds`` after the track start."""
        ticks = seconds * self.timescale
        idx = round(ticks / self.sample_duration)
        if abs(idx * self.sample_duration - ticks) > 1e-6 * self.timescale:
            return None
        return idx

    def byte_offset(self, sample_index: int) -> int:
        return sum(self.sizes[:sample_index])

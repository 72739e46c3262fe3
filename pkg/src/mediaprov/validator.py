"""Media-object validation state machine, canonical processing and platform actions.

Decision steps::

    3-1 object carries a manifest?          3-5 manifest retrieved via watermark?
    3-2 manifest's distributor registered?  3-6 retrieved manifest trusted?
    3-3 manifest trusted and binds object?  3-7 retrieved manifest binds object?
    3-4 object carries a watermark?         4-8 canonical processing decided?
                                            4-9 canonical processing performed
                                            4-10 canonical content retrieved?
                                            4-11 canonical content validates?

A failed embedded check (3-1, 3-2 or 3-3) falls through to 3-4.  Every
complete path, as a sequence of ``(step, answer)`` pairs, is listed in
:data:`STATE_GRAPH` together with its terminal.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any
from urllib.parse import urlsplit

import numpy as np

from . import cbor
from .binding import hash_fragment, hash_init_segment, verify_inclusion
from .bmff import Fragment, Kind, MediaObject, TrackEssence, parse_media, serialize_media
from .errors import (
    CanonicalUnavailable,
    CanonicalValidationError,
    CoverageGap,
    InvariantViolation,
    MalformedBox,
    MalformedStore,
    MissingAssertion,
    MissingProof,
    NoOverlap,
    RecoveryFailed,
)
from .manifest import (
    WATERMARK,
    Manifest,
    ManifestStore,
    ProofRecord,
    TrustList,
    get_asset_reference,
    merkle_rows,
    parse_manifest_store,
    validate_store_binding,
    verify_manifest,
)
from .pipeline import CanonicalClip, produce_canonical_clip
from .recovery.client import RecoveryClient
from .recovery.protocol import DescriptorEntry, RecoveryResponse
from .watermark import PARAMS, Vp1Payload, WatermarkSegment, clip_interval_range, extract_segments, pcm_from_bytes

log = logging.getLogger(__name__)

REPORT_VERSION = 1


class Terminal(str, Enum):
    EMBEDDED_VALID = "EmbeddedValid"
    WATERMARK_RECOVERED_VALID = "WatermarkRecoveredValid"
    NO_MANIFEST_NO_WATERMARK = "NoManifestNoWatermark"
    UNREGISTERED_DISTRIBUTOR = "UnregisteredDistributor"
    RETRIEVAL_FAILED = "RetrievalFailed"
    UNTRUSTED_SIGNATURE = "UntrustedSignature"
    BINDING_MISMATCH = "BindingMismatch"
    CANONICAL_PRODUCED = "CanonicalProduced"
    CANONICAL_DECLINED = "CanonicalDeclined"
    CANONICAL_VALIDATION_ERROR = "CanonicalValidationError"


SUCCESS_TERMINALS = frozenset(
    {Terminal.EMBEDDED_VALID, Terminal.WATERMARK_RECOVERED_VALID, Terminal.CANONICAL_PRODUCED}
)


class OutcomeKind(str, Enum):
    SUCCESS = "Success"
    EXCEPTION = "Exception"


def _build_graph() -> dict[tuple[tuple[str, bool], ...], Terminal]:
    embedded = {
        (("3-1", False),): Terminal.NO_MANIFEST_NO_WATERMARK,
        (("3-1", True), ("3-2", False)): Terminal.UNREGISTERED_DISTRIBUTOR,
        (("3-1", True), ("3-2", True), ("3-3", False)): Terminal.BINDING_MISMATCH,
    }
    y = True
    watermark = {
        (("3-5", False),): Terminal.RETRIEVAL_FAILED,
        (("3-5", y), ("3-6", False)): Terminal.UNTRUSTED_SIGNATURE,
        (("3-5", y), ("3-6", y), ("3-7", y)): Terminal.WATERMARK_RECOVERED_VALID,
        (("3-5", y), ("3-6", y), ("3-7", False), ("4-8", False)): Terminal.CANONICAL_DECLINED,
        (("3-5", y), ("3-6", y), ("3-7", False), ("4-8", y), ("4-9", y), ("4-10", False)): Terminal.CANONICAL_VALIDATION_ERROR,
        (("3-5", y), ("3-6", y), ("3-7", False), ("4-8", y), ("4-9", y), ("4-10", y), ("4-11", False)): Terminal.CANONICAL_VALIDATION_ERROR,
        (("3-5", y), ("3-6", y), ("3-7", False), ("4-8", y), ("4-9", y), ("4-10", y), ("4-11", y)): Terminal.CANONICAL_PRODUCED,
    }
    graph = {(("3-1", y), ("3-2", y), ("3-3", y)): Terminal.EMBEDDED_VALID}
    for prefix, no_mark in embedded.items():
        graph[prefix + (("3-4", False),)] = no_mark
        for suffix, terminal in watermark.items():
            graph[prefix + (("3-4", y),) + suffix] = terminal
    return graph


STATE_GRAPH = _build_graph()


def terminal_for(trail, decisions) -> Terminal:
    key = tuple(zip(trail, decisions))
    if len(trail) != len(decisions) or key not in STATE_GRAPH:
        raise InvariantViolation(f"{list(key)} is not a path through the validation graph")
    return STATE_GRAPH[key]


# ---------------------------------------------------------------------------
# policy and reports


class Action(str, Enum):
    ATTACH_SIDE_BY_SIDE = "AttachSideBySide"
    OFFER_CHOICE = "OfferChoice"
    AUTO_COMPARE = "AutoCompare"
    REPLACE = "Replace"
    FORWARD_TO_MODERATION = "ForwardToModeration"


class CanonicalDecision(str, Enum):
    AUTOMATIC = "Automatic"
    REQUIRE_APPROVAL = "RequireApprovalHook"


@dataclass(frozen=True)
class PlatformPolicy:
    action: Action = Action.REPLACE
    canonical_decision: CanonicalDecision = CanonicalDecision.AUTOMATIC


@dataclass(frozen=True)
class ComparisonReport:
    duration_delta_seconds: float
    matching_essence_byte_ratio: float
    per_track: dict[int, dict[str, int]]

    def to_dict(self) -> dict:
        return {
            "duration_delta_seconds": self.duration_delta_seconds,
            "matching_essence_byte_ratio": self.matching_essence_byte_ratio,
            "per_track": {str(k): dict(v) for k, v in sorted(self.per_track.items())},
        }


@dataclass(frozen=True)
class PlatformAction:
    action: Action
    status: str  # "done" or "pending"
    payload_ref: str | None = None
    objects: tuple[str, ...] = ()
    hook: str | None = None
    comparison: ComparisonReport | None = None
    trail: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"action": self.action.value, "status": self.status, "objects": list(self.objects)}
        if self.payload_ref is not None:
            out["payload_ref"] = self.payload_ref
        if self.hook is not None:
            out["hook"] = self.hook
        if self.comparison is not None:
            out["comparison"] = self.comparison.to_dict()
        if self.trail:
            out["trail"] = list(self.trail)
        return out


@dataclass(frozen=True)
class ValidationOutcome:
    terminal: Terminal
    trail: tuple[str, ...]
    decisions: tuple[bool, ...]
    distributor_id: str | None = None
    interval_range: tuple[int, int] | None = None
    server_code: int | None = None
    detail: str = ""
    canonical: CanonicalClip | None = field(default=None, repr=False)
    comparison: ComparisonReport | None = None
    action: PlatformAction | None = None
    segments: tuple["ValidationOutcome", ...] = ()

    @property
    def kind(self) -> OutcomeKind:
        return OutcomeKind.SUCCESS if self.terminal in SUCCESS_TERMINALS else OutcomeKind.EXCEPTION

    @property
    def success(self) -> bool:
        return self.kind is OutcomeKind.SUCCESS

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "version": REPORT_VERSION,
            "terminal": self.terminal.value,
            "kind": self.kind.value,
            "trail": list(self.trail),
            "decisions": list(self.decisions),
            "distributor": self.distributor_id,
            "server_code": self.server_code,
            "interval_range": list(self.interval_range) if self.interval_range else None,
            "detail": self.detail,
            "comparison": self.comparison.to_dict() if self.comparison else None,
            "action": self.action.to_dict() if self.action else None,
            "canonical": None,
            "segments": [s.to_dict() for s in self.segments],
        }
        if self.canonical is not None:
            out["canonical"] = {
                "id": object_id(self.canonical.media),
                "start": self.canonical.start_time,
                "end": self.canonical.end_time,
                "dhs": list(self.canonical.dhs_ids),
                "fragments_checked": len(self.canonical.checks),
            }
        return out

    def to_cbor(self) -> bytes:
        return cbor.dumps(self.to_dict())


def object_id(obj: MediaObject) -> str:
    return "sha256:" + hashlib.sha256(serialize_media(obj)).hexdigest()


class _Trail:
    def __init__(self, steps=(), answers=()):
        self.steps = list(steps)
        self.answers = list(answers)

    def step(self, label: str, answer: bool) -> bool:
        self.steps.append(label)
        self.answers.append(bool(answer))
        return bool(answer)

    def copy(self) -> "_Trail":
        return _Trail(self.steps, self.answers)

    def finish(self, **kw) -> ValidationOutcome:
        terminal = terminal_for(self.steps, self.answers)
        return ValidationOutcome(terminal, tuple(self.steps), tuple(self.answers), **kw)


# ---------------------------------------------------------------------------
# comparison and actions


def _window(ess: TrackEssence, t0: float, t1: float) -> tuple[bytes, tuple[int, ...]]:
    """Bytes and sample sizes of samples starting in ``[t0, t1)`` seconds from track start."""
    step = ess.sample_duration / ess.timescale
    i0 = max(0, int(np.ceil(t0 / step - 1e-9)))
    i1 = min(ess.sample_count, int(np.ceil(t1 / step - 1e-9)))
    if i1 <= i0:
        return b"", ()
    return ess.data[ess.byte_offset(i0) : ess.byte_offset(i1)], ess.sizes[i0:i1]


def compare_assets(uploaded: MediaObject, canonical: MediaObject, alignment: float) -> ComparisonReport:
    """Compare per-track essence over the overlap, ``alignment`` being the uploaded
    start minus the canonical start in broadcast seconds."""
    per_track: dict[int, dict[str, int]] = {}
    matching = total = 0
    for tid in uploaded.track_ids:
        if tid not in canonical.track_ids or not uploaded.fragments_for(tid) or not canonical.fragments_for(tid):
            continue
        ue, ce = TrackEssence.of(uploaded, tid), TrackEssence.of(canonical, tid)
        lo = max(0.0, alignment)
        hi = min(ce.duration_seconds, alignment + ue.duration_seconds)
        if hi <= lo:
            continue
        cb, _ = _window(ce, lo, hi)
        ub, _ = _window(ue, lo - alignment, hi - alignment)
        n = min(len(cb), len(ub))
        a = np.frombuffer(cb[:n], dtype=np.uint8)
        b = np.frombuffer(ub[:n], dtype=np.uint8)
        same = int(np.count_nonzero(a == b))
        overlap = max(len(cb), len(ub))
        per_track[tid] = {"overlap_bytes": overlap, "differing_bytes": overlap - same}
        matching += same
        total += overlap
    if total == 0:
        raise NoOverlap("uploaded and canonical objects do not overlap in time")
    return ComparisonReport(canonical.duration - uploaded.duration, matching / total, per_track)


def apply_policy(
    policy: PlatformPolicy,
    *,
    uploaded_id: str,
    canonical_id: str | None,
    comparison: ComparisonReport | None = None,
    trail: tuple[str, ...] = (),
) -> PlatformAction:
    if canonical_id is None:
        raise CanonicalUnavailable("platform actions need canonical content")
    a = policy.action
    if a is Action.ATTACH_SIDE_BY_SIDE:
        return PlatformAction(a, "done", uploaded_id, (uploaded_id, canonical_id))
    if a is Action.OFFER_CHOICE:
        return PlatformAction(a, "pending", None, (uploaded_id, canonical_id), hook="user_choice")
    if a is Action.AUTO_COMPARE:
        return PlatformAction(a, "done", uploaded_id, (uploaded_id, canonical_id), comparison=comparison)
    if a is Action.REPLACE:
        return PlatformAction(a, "done", canonical_id, (uploaded_id, canonical_id))
    return PlatformAction(a, "pending", None, (uploaded_id, canonical_id), hook="moderation", trail=tuple(trail))


# ---------------------------------------------------------------------------
# embedded path


def find_embedded_stores(obj: MediaObject) -> list[bytes]:
    if obj.container_manifest is not None:
        return [obj.container_manifest]
    return [i.provenance for i in obj.init_segments if i.provenance is not None]


def _embedded_registered(stores: list[bytes], trust: TrustList) -> ManifestStore | None:
    try:
        store = parse_manifest_store(stores[0])
    except MalformedStore:
        return None
    return store if trust.get(store.active.claim.distributor_id) is not None else None


def _embedded_binds(store: ManifestStore, raw: list[bytes], obj: MediaObject, trust: TrustList) -> tuple[bool, str]:
    if any(r != raw[0] for r in raw):
        return False, "init segments carry different manifest stores"
    for m in store.manifests:
        v = verify_manifest(m, trust)
        if not v.trusted:
            return False, f"embedded manifest {v.verdict.value}: {v.detail}"
    try:
        b = validate_store_binding(store, obj)
    except (MissingProof, MissingAssertion) as exc:
        return False, str(exc)
    return b.match, b.detail


# ---------------------------------------------------------------------------
# watermark path


@dataclass
class _SegmentWork:
    segment: WatermarkSegment
    lo: int  # audio sample window in the uploaded object
    hi: int
    binx: int = 0
    einx: int = 0
    response: RecoveryResponse | None = None
    entries: list[DescriptorEntry] = field(default_factory=list)
    manifests: list[Manifest] = field(default_factory=list)
    replicas: list[MediaObject] | None = None
    distributor: str | None = None
    origin: float = 0.0  # broadcast time of uploaded audio sample 0

    def replica_boundaries(self) -> set[int]:
        """Fragment boundaries of the replicas, as uploaded audio sample positions."""
        out = set()
        sr = PARAMS.sample_rate
        for rep in self.replicas or []:
            tid = rep.audio_track_id()
            if tid is None:
                continue
            ts = rep.init_for(tid).timescale
            for f in rep.fragments_for(tid):
                for t in (f.base_media_decode_time, f.end_time):
                    out.add(round((t / ts - self.origin) * sr))
        return out


def _fetch_replicas(work: _SegmentWork, client: RecoveryClient) -> str | None:
    replicas = []
    for m in work.manifests:
        try:
            replicas.append(parse_media(client.fetch(get_asset_reference(m).uri)))
        except (RecoveryFailed, MalformedBox, MissingAssertion) as exc:
            work.replicas = None
            return f"replica unavailable: {exc}"
    work.replicas = replicas
    return None


def _check_uploaded(obj: MediaObject, work: _SegmentWork) -> tuple[bool, str]:
    """Does the uploaded essence in ``[lo, hi)`` equal whole replica fragments
    that verify against the trusted Merkle roots?"""
    sr = PARAMS.sample_rate
    t0 = work.origin + work.lo / sr
    t1 = work.origin + work.hi / sr
    seg = work.segment
    for m, e in zip(work.manifests, work.entries):
        mark = m.assertion(WATERMARK)
        if mark is None:
            return False, f"manifest for {e.dhs_id} has no watermark soft binding"
        v = mark.value
        if v["server"] != seg.server_code or (v["binx"], v["einx"]) != (e.first_interval_code, e.last_interval_code):
            return False, f"watermark soft binding of {e.dhs_id} does not match the recovered codes"
    if work.replicas is None:
        return False, "replicas unavailable"
    rows = [merkle_rows(m) for m in work.manifests]
    tracks = set(rows[0])
    if any(set(r) != tracks for r in rows) or set(obj.track_ids) != tracks:
        return False, f"uploaded tracks {sorted(obj.track_ids)} do not match bound tracks {sorted(tracks)}"
    checked = 0
    for tid in sorted(tracks):
        if any(hash_init_segment(obj.init_for(tid)) != r[tid]["init"] for r in rows):
            return False, f"track {tid} init segment differs from the bound one"
        ess = TrackEssence.of(obj, tid)
        rel0, rel1 = work.lo / sr, work.hi / sr
        i0, i1 = ess.sample_index(rel0), ess.sample_index(rel1)
        if i0 is None or i1 is None or i1 > ess.sample_count:
            return False, f"track {tid} region is not on sample boundaries"
        data = ess.data[ess.byte_offset(i0) : ess.byte_offset(i1)]
        sizes = ess.sizes[i0:i1]
        pos = size_pos = 0
        expect_start = t0
        for m, rep, row in zip(work.manifests, work.replicas, rows):
            ts = rep.init_for(tid).timescale
            for f in rep.fragments_for(tid):
                f0, f1 = f.base_media_decode_time / ts, f.end_time / ts
                if not (f0 < t1 - 1e-9 and f1 > t0 + 1e-9):
                    continue
                if abs(f0 - expect_start) > 1e-6:
                    return False, f"track {tid}: uploaded clip is not aligned to replica fragment {f.sequence_number}"
                expect_start = f1
                piece = data[pos : pos + len(f.sample_data)]
                if len(piece) != len(f.sample_data) or tuple(sizes[size_pos : size_pos + f.sample_count]) != tuple(f.sizes()):
                    return False, f"track {tid}: uploaded essence does not tile fragment {f.sequence_number}"
                if f.provenance is None:
                    return False, f"replica fragment {f.sequence_number} carries no proof"
                try:
                    rec = ProofRecord.from_bytes(f.provenance)
                except MissingProof as exc:
                    return False, str(exc)
                r = row[tid]
                rebuilt = Fragment(
                    f.track_id, f.sequence_number, f.base_media_decode_time, f.sample_count, f.sample_duration,
                    piece, f.sample_sizes,
                )
                if rec.dhs_id != m.dhs_id or not verify_inclusion(r["root"], hash_fragment(rebuilt), rec.proof, r["count"]):
                    return False, f"track {tid}: essence of fragment {f.sequence_number} does not match the manifest"
                pos += len(piece)
                size_pos += f.sample_count
                checked += 1
        if abs(expect_start - t1) > 1e-6 or pos != len(data):
            return False, f"track {tid}: uploaded essence is not exactly covered by replica fragments"
    return True, f"{checked} fragments verified against recovered manifests"


def _recover(work: _SegmentWork, obj_samples: int, client: RecoveryClient, trust: TrustList, trail: _Trail):
    """Steps 3-5 and 3-6; returns a finished outcome on failure, else None."""
    seg = work.segment
    work.binx, work.einx = clip_interval_range(seg, work.lo, work.hi)
    payload = Vp1Payload(seg.server_code, max(work.binx, 0))
    host = urlsplit(client.recovery_url(payload)).hostname or ""
    common = dict(server_code=seg.server_code, interval_range=(work.binx, work.einx))
    if trust.registered_authority(host) is None:
        trail.step("3-5", False)
        return trail.finish(detail=f"watermark authority {host} is not a registered broadcaster", **common)
    response = None
    for start in (payload, seg.first_payload):
        try:
            response = client.recover(start, work.einx)
            break
        except RecoveryFailed as exc:
            detail = str(exc)
    entries = response.entries_for(work.binx, work.einx) if response is not None else []
    if not entries:
        trail.step("3-5", False)
        return trail.finish(detail=f"recovery failed: {detail if response is None else 'no covering DHS'}", **common)
    try:
        stores = [response.manifest_store(e) for e in entries]
    except MalformedStore as exc:
        trail.step("3-5", False)
        return trail.finish(detail=f"recovered manifest unreadable: {exc}", **common)
    trail.step("3-5", True)
    work.response, work.entries = response, entries
    work.manifests = [s.active for s in stores]
    distributors = set()
    for e, s in zip(entries, stores):
        v = verify_manifest(s, trust)
        if not v.trusted:
            trail.step("3-6", False)
            return trail.finish(detail=f"manifest for {e.dhs_id}: {v.verdict.value} {v.detail}", **common)
        if s.active.dhs_id != e.dhs_id:
            trail.step("3-6", False)
            return trail.finish(detail=f"manifest served for {e.dhs_id} names {s.active.dhs_id}", **common)
        distributors.add(v.distributor_id)
    if len(distributors) != 1:
        trail.step("3-6", False)
        return trail.finish(detail=f"covering manifests signed by several distributors {sorted(distributors)}", **common)
    trail.step("3-6", True)
    work.distributor = distributors.pop()
    d = response.descriptor
    work.origin = d.media_time(seg.first_interval_code) - seg.first_cell_sample / PARAMS.sample_rate
    return None


def _region_object(obj: MediaObject, work: _SegmentWork) -> MediaObject:
    """The uploaded essence in the segment's window as a monolithic object."""
    sr = PARAMS.sample_rate
    frags = []
    for tid in obj.track_ids:
        ess = TrackEssence.of(obj, tid)
        data, sizes = _window(ess, work.lo / sr, work.hi / sr)
        if not sizes:
            continue
        constant = len(set(sizes)) == 1
        frags.append(Fragment(tid, 1, 0, len(sizes), ess.sample_duration, data, None if constant else tuple(sizes)))
    return MediaObject(Kind.MONOLITHIC, tuple(replace(i, provenance=None) for i in obj.init_segments), tuple(frags))


def _finish_segment(obj, work, client, trust, policy, approve, trail) -> ValidationOutcome:
    common = dict(
        server_code=work.segment.server_code, interval_range=(work.binx, work.einx), distributor_id=work.distributor
    )
    ok, detail = _check_uploaded(obj, work)
    if trail.step("3-7", ok):
        return trail.finish(detail=detail, **common)
    decided = policy.canonical_decision is CanonicalDecision.AUTOMATIC or approve
    if not trail.step("4-8", decided):
        uploaded_id = object_id(obj)
        pending = PlatformAction(policy.action, "pending", None, (uploaded_id,), hook="canonical_approval")
        return trail.finish(detail=f"{detail}; canonical processing awaits approval", action=pending, **common)
    trail.step("4-9", True)
    sr = PARAMS.sample_rate
    t0, t1 = work.origin + work.lo / sr, work.origin + work.hi / sr
    try:
        clip = produce_canonical_clip(
            work.response, work.binx, work.einx, client.fetch, time_range=(t0, t1)
        )
    except CanonicalValidationError as exc:
        retrieved = len(exc.args) > 1 and exc.args[1] is not None
        trail.step("4-10", retrieved)
        if retrieved:
            trail.step("4-11", False)
        return trail.finish(detail=f"canonical content: {exc.args[0]}", **common)
    except (CoverageGap, RecoveryFailed) as exc:
        trail.step("4-10", False)
        return trail.finish(detail=f"canonical content unavailable: {exc}", **common)
    trail.step("4-10", True)
    trail.step("4-11", True)
    region = _region_object(obj, work)
    try:
        comparison = compare_assets(region, clip.media, t0 - clip.start_time)
    except NoOverlap:
        comparison = None
    action = apply_policy(
        policy,
        uploaded_id=object_id(obj),
        canonical_id=object_id(clip.media),
        comparison=comparison,
        trail=tuple(trail.steps),
    )
    return trail.finish(detail=detail, canonical=clip, comparison=comparison, action=action, **common)


def _partition(works: list[_SegmentWork]) -> None:
    """Place each splice between adjacent segments on a fragment boundary both sides share."""
    for a, b in zip(works, works[1:]):
        gap_lo, gap_hi = a.segment.end_sample, b.segment.first_cell_sample
        common = sorted(s for s in a.replica_boundaries() & b.replica_boundaries() if gap_lo <= s <= gap_hi)
        cut = common[0] if common else gap_hi
        a.hi = b.lo = cut


def validate_media_object(
    obj: MediaObject,
    trust: TrustList,
    recovery_client: RecoveryClient,
    policy: PlatformPolicy = PlatformPolicy(),
    *,
    approve: bool = False,
) -> ValidationOutcome:
    """Run the full decision graph over ``obj``; never raises for validation failures."""
    trail = _Trail()
    raw = find_embedded_stores(obj)
    embedded_detail = ""
    if trail.step("3-1", bool(raw)):
        store = _embedded_registered(raw, trust)
        if trail.step("3-2", store is not None):
            ok, embedded_detail = _embedded_binds(store, raw, obj, trust)
            if trail.step("3-3", ok):
                return trail.finish(distributor_id=store.active.claim.distributor_id, detail=embedded_detail)
        else:
            embedded_detail = "embedded manifest does not name a registered distributor"

    audio_tid = obj.audio_track_id()
    segments = []
    n_samples = 0
    if audio_tid is not None and obj.fragments_for(audio_tid):
        audio = pcm_from_bytes(obj.essence(audio_tid))
        n_samples = len(audio)
        segments = extract_segments(audio)
    if not trail.step("3-4", bool(segments)):
        return trail.finish(detail=embedded_detail or "no manifest and no watermark")

    works = []
    for i, seg in enumerate(segments):
        lo = 0 if i == 0 else segments[i - 1].end_sample
        hi = n_samples if i == len(segments) - 1 else segments[i + 1].first_cell_sample
        works.append(_SegmentWork(seg, lo, hi))

    outcomes: list[ValidationOutcome | None] = [None] * len(works)
    trails = [trail.copy() for _ in works]
    for i, w in enumerate(works):
        failed = _recover(w, n_samples, recovery_client, trust, trails[i])
        if failed is not None:
            outcomes[i] = failed
        elif len(works) > 1:
            _fetch_replicas(w, recovery_client)
    if len(works) > 1 and all(o is None for o in outcomes):
        _partition(works)
        for i, w in enumerate(works):
            w.binx, w.einx = clip_interval_range(w.segment, w.lo, w.hi)
            w.entries = [e for e in w.entries if e.last_interval_code >= w.binx and e.first_interval_code <= w.einx]
            w.manifests = [w.response.manifest_store(e).active for e in w.entries]
            _fetch_replicas(w, recovery_client)
    for i, w in enumerate(works):
        if outcomes[i] is None:
            if w.replicas is None:
                _fetch_replicas(w, recovery_client)
            outcomes[i] = _finish_segment(obj, w, recovery_client, trust, policy, approve, trails[i])

    if len(outcomes) == 1:
        return outcomes[0]
    failing = [o for o in outcomes if not o.success]
    lead = failing[0] if failing else next(
        (o for o in outcomes if o.terminal is Terminal.CANONICAL_PRODUCED), outcomes[0]
    )
    return replace(lead, segments=tuple(outcomes), detail=f"{len(outcomes)} watermark segments; " + lead.detail)

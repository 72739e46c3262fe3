"""Production side: watermark a broadcast, cut it into Data Hash Segments,
sign one manifest per DHS, publish, and simulate what happens downstream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from .binding import build_merkle, hash_fragment, hash_init_segment, hash_monolithic, MerkleRow, prove_inclusion
from .bmff import (
    AUDIO_CODEC,
    VIDEO_CODEC,
    Fragment,
    InitSegment,
    Kind,
    MediaObject,
    TrackEssence,
    check_invariants,
    concat_objects,
    parse_media,
    remux_monolithic,
    serialize_media,
    slice_fragments,
)
from .errors import (
    CanonicalValidationError,
    ConfigInvariantViolation,
    CoverageGap,
    InvariantViolation,
    MalformedBox,
    MalformedStore,
    MissingAssertion,
    MissingProof,
)
from .manifest import (
    AssetReference,
    ManifestStore,
    ProofRecord,
    TrustList,
    create_manifest,
    get_asset_reference,
    merge_stores,
    merkle_assertion,
    metadata_assertion,
    monolithic_assertion,
    parse_manifest_store,
    serialize_manifest_store,
    validate_binding,
    verify_manifest,
    watermark_assertion,
)
from .recovery.protocol import DhsRecord, DhsRegistry, RecoveryResponse, asset_uri, default_valid_until
from .watermark import PARAMS, Vp1Payload, embed_watermark, pcm_from_bytes, pcm_to_bytes

log = logging.getLogger(__name__)

AUDIO_TRACK = 1
VIDEO_TRACK = 2
VIDEO_TIMESCALE = 90000


def _is_whole(x: float) -> bool:
    return abs(x - round(x)) < 1e-9


@dataclass(frozen=True)
class BroadcastConfig:
    server_code: int
    start_interval_code: int
    distributor_id: str
    signing_key: Ed25519PrivateKey = field(repr=False)
    base_domain: str = "wm.test"
    dhs_cell_count: int = 20
    fragment_duration: float = 2.0
    video_fps: int = 25
    title: str = "live broadcast"
    media_start: float = 0.0
    created_at: str | None = None
    cell_duration: float = PARAMS.cell_seconds

    def __post_init__(self):
        if self.cell_duration != PARAMS.cell_seconds:
            raise ConfigInvariantViolation("cell duration is fixed by the watermark channel")
        if self.dhs_cell_count < 1 or self.fragment_duration <= 0:
            raise ConfigInvariantViolation("DHS needs at least one cell and fragments a positive duration")
        if not _is_whole(self.dhs_duration / self.fragment_duration):
            raise ConfigInvariantViolation(
                f"DHS duration {self.dhs_duration}s is not a multiple of fragment duration {self.fragment_duration}s"
            )
        if not _is_whole(self.fragment_duration * PARAMS.sample_rate) or not _is_whole(
            self.fragment_duration * self.video_fps
        ):
            raise ConfigInvariantViolation("fragments must hold a whole number of audio samples and video frames")
        if not _is_whole(self.media_start * PARAMS.sample_rate) or not _is_whole(self.media_start * self.video_fps):
            raise ConfigInvariantViolation("media start must fall on an audio sample and video frame boundary")

    @property
    def dhs_duration(self) -> float:
        return self.dhs_cell_count * self.cell_duration

    @property
    def fragments_per_dhs(self) -> int:
        return round(self.dhs_duration / self.fragment_duration)


@dataclass(frozen=True)
class SourceEssence:
    """Uncompressed programme essence: 48 kHz mono PCM plus opaque video frames."""

    audio: np.ndarray = field(repr=False)
    video_frames: tuple[bytes, ...] = field(repr=False)
    fps: int = 25

    @property
    def duration(self) -> float:
        return len(self.audio) / PARAMS.sample_rate

    @classmethod
    def from_media(cls, obj: MediaObject) -> "SourceEssence":
        audio_tid = obj.audio_track_id()
        if audio_tid is None:
            raise InvariantViolation("source has no PCM audio track")
        audio = pcm_from_bytes(obj.essence(audio_tid))
        frames: list[bytes] = []
        fps = 25
        for init in obj.init_segments:
            if init.codec == VIDEO_CODEC:
                ess = TrackEssence.of(obj, init.track_id)
                fps = round(init.timescale / ess.sample_duration)
                pos = 0
                for size in ess.sizes:
                    frames.append(ess.data[pos : pos + size])
                    pos += size
                break
        return cls(audio, tuple(frames), fps)


def synthetic_source(duration: float, seed: int = 0, fps: int = 25) -> SourceEssence:
    """Deterministic test programme: a tone plus noise, and random-sized video frames."""
    rng = np.random.default_rng(seed)
    n = round(duration * PARAMS.sample_rate)
    t = np.arange(n) / PARAMS.sample_rate
    tone = 6000 * np.sin(2 * np.pi * (220 + 20 * (seed % 7)) * t)
    audio = np.clip(tone + rng.normal(0, 400, n), -32768, 32767).astype(np.int16)
    n_frames = round(duration * fps)
    sizes = rng.integers(48, 160, n_frames)
    blob = rng.bytes(int(sizes.sum()))
    frames, pos = [], 0
    for s in sizes:
        frames.append(blob[pos : pos + s])
        pos += int(s)
    return SourceEssence(audio, tuple(frames), fps)


@dataclass(frozen=True)
class DataHashSegment:
    dhs_id: str
    server_code: int
    first_interval_code: int
    last_interval_code: int
    replica: MediaObject = field(repr=False)
    manifest_store: bytes = field(repr=False)
    media_start: float = 0.0
    media_end: float = 0.0

    @property
    def available_at(self) -> float:
        """Earliest broadcast time at which the manifest can exist."""
        return self.media_end

    @property
    def store(self) -> ManifestStore:
        return parse_manifest_store(self.manifest_store)

    def replica_bytes(self) -> bytes:
        return serialize_media(self.replica)

    def record(self, valid_until: str | None = None) -> DhsRecord:
        return DhsRecord(
            self.server_code,
            self.dhs_id,
            self.first_interval_code,
            self.last_interval_code,
            self.media_start,
            self.manifest_store,
            f"assets/{self.dhs_id}.pmf4",
            valid_until or default_valid_until(),
        )


def dhs_identifier(server_code: int, first_interval_code: int) -> str:
    return f"{server_code:08x}-{first_interval_code:06d}"


def _init_segments() -> tuple[InitSegment, ...]:
    return (
        InitSegment(AUDIO_TRACK, PARAMS.sample_rate, AUDIO_CODEC),
        InitSegment(VIDEO_TRACK, VIDEO_TIMESCALE, VIDEO_CODEC),
    )


def produce_replica(source: SourceEssence, config: BroadcastConfig) -> Iterator[DataHashSegment]:
    """Yield one DHS at a time, each only once all of its cells exist.

    Trailing source shorter than a full DHS is not emitted.
    """
    if source.fps != config.video_fps:
        raise ConfigInvariantViolation(f"source is {source.fps} fps, config expects {config.video_fps}")
    n_dhs = int(source.duration // config.dhs_duration + 1e-9)
    if n_dhs < 1:
        raise ConfigInvariantViolation(f"source of {source.duration}s is shorter than one DHS ({config.dhs_duration}s)")
    if len(source.video_frames) < round(n_dhs * config.dhs_duration * config.video_fps):
        raise ConfigInvariantViolation("source has fewer video frames than audio duration implies")

    sr = PARAMS.sample_rate
    dhs_samples = round(config.dhs_duration * sr)
    frag_samples = round(config.fragment_duration * sr)
    frag_frames = round(config.fragment_duration * config.video_fps)
    frame_ticks = VIDEO_TIMESCALE // config.video_fps
    per_dhs = config.fragments_per_dhs
    audio_base = round(config.media_start * sr)
    video_base = round(config.media_start * VIDEO_TIMESCALE)
    inits = _init_segments()
    init_hashes = {i.track_id: hash_init_segment(i) for i in inits}

    for k in range(n_dhs):
        binx = config.start_interval_code + k * config.dhs_cell_count
        einx = binx + config.dhs_cell_count - 1
        dhs_id = dhs_identifier(config.server_code, binx)
        chunk = source.audio[k * dhs_samples : (k + 1) * dhs_samples]
        marked = embed_watermark(chunk, Vp1Payload(config.server_code, binx), config.dhs_cell_count)

        tracks: dict[int, list[Fragment]] = {AUDIO_TRACK: [], VIDEO_TRACK: []}
        for i in range(per_dhs):
            seq = k * per_dhs + i + 1
            a0 = i * frag_samples
            tracks[AUDIO_TRACK].append(
                Fragment(
                    AUDIO_TRACK,
                    seq,
                    audio_base + k * dhs_samples + a0,
                    frag_samples,
                    1,
                    pcm_to_bytes(marked[a0 : a0 + frag_samples]),
                )
            )
            f0 = (k * per_dhs + i) * frag_frames
            frames = source.video_frames[f0 : f0 + frag_frames]
            tracks[VIDEO_TRACK].append(
                Fragment(
                    VIDEO_TRACK,
                    seq,
                    video_base + f0 * frame_ticks,
                    frag_frames,
                    frame_ticks,
                    b"".join(frames),
                    tuple(len(f) for f in frames),
                )
            )

        rows = []
        proved: dict[int, list[Fragment]] = {}
        for tid, frags in tracks.items():
            tree = build_merkle([hash_fragment(f) for f in frags])
            rows.append(MerkleRow(tid, tree.leaf_count, tree.root))
            proved[tid] = [
                replace(
                    f,
                    provenance=ProofRecord(dhs_id, i, tree.leaf_count, prove_inclusion(tree, i).siblings).to_bytes(),
                )
                for i, f in enumerate(frags)
            ]

        t0 = config.media_start + k * config.dhs_duration
        t1 = t0 + config.dhs_duration
        store = create_manifest(
            config.distributor_id,
            merkle_assertion(dhs_id, rows, init_hashes),
            [
                watermark_assertion(config.server_code, binx, einx),
                AssetReference(asset_uri(config.server_code, config.base_domain, dhs_id), t0, t1).to_assertion(),
                metadata_assertion(title=config.title, dhs=dhs_id),
            ],
            config.signing_key,
            title=f"{config.title} [{binx}..{einx}]",
            created_at=config.created_at,
            dhs_range=(binx, einx),
        )
        store_bytes = serialize_manifest_store(store)
        fragments = []
        for pair in zip(proved[AUDIO_TRACK], proved[VIDEO_TRACK]):
            fragments.extend(pair)
        replica = MediaObject(
            Kind.FRAGMENTED,
            tuple(replace(i, provenance=store_bytes) for i in inits),
            tuple(fragments),
        )
        log.debug("produced DHS %s [%d, %d]", dhs_id, binx, einx)
        yield DataHashSegment(dhs_id, config.server_code, binx, einx, replica, store_bytes, t0, t1)


def publish_stream(
    stream: Iterable[DataHashSegment], registry: DhsRegistry, live_edge: float | None = None
) -> list[DataHashSegment]:
    """Publish each DHS whose last cell lies at or behind ``live_edge``."""
    published = []
    for dhs in stream:
        if live_edge is not None and dhs.available_at > live_edge + 1e-9:
            break
        registry.publish(dhs.record(), dhs.replica_bytes())
        published.append(dhs)
    return published


# ---------------------------------------------------------------------------
# downstream simulation


def simulate_capture(dhs_stream: Sequence[DataHashSegment], clip_start: float, clip_end: float) -> MediaObject:
    """HDMI-style capture of ``[clip_start, clip_end)`` seconds into the stream.

    Container metadata is lost and the clip is re-wrapped as a monolithic
    object with decode times restarting at zero; decoded samples, and with
    them the watermark, survive.
    """
    full = concat_objects([d.replica for d in dhs_stream])
    sliced = slice_fragments(full, clip_start, clip_end)
    return remux_monolithic(sliced)


def perturb_essence(obj: MediaObject, seed: int = 0) -> MediaObject:
    """Model a lossy re-encode: every sample and frame changes, the watermark LSBs do not."""
    rng = np.random.default_rng(seed)
    frags = []
    for f in obj.fragments:
        codec = obj.init_for(f.track_id).codec
        if codec == AUDIO_CODEC:
            pcm = pcm_from_bytes(f.sample_data).astype(np.int32)
            dither = rng.choice(np.array([-4, -2, 2, 4]), size=pcm.size)
            pcm = np.clip(pcm + dither, -32768, 32766)
            data = pcm_to_bytes(((pcm & ~1) | (pcm_from_bytes(f.sample_data) & 1)).astype(np.int16))
        else:
            buf = bytearray(f.sample_data)
            for pos in rng.integers(0, len(buf), max(1, len(buf) // 64)):
                buf[pos] ^= 0x5A
            data = bytes(buf)
        frags.append(replace(f, sample_data=data))
    return replace(obj, fragments=tuple(frags))


def sign_monolithic(
    obj: MediaObject,
    distributor_id: str,
    signing_key: Ed25519PrivateKey,
    *,
    extras: Sequence = (),
    title: str = "",
    created_at: str | None = None,
) -> MediaObject:
    """Attach a container manifest whose hard binding covers the whole file but itself."""
    bare = replace(obj, container_manifest=None)
    data = serialize_media(bare)
    store = create_manifest(
        distributor_id,
        monolithic_assertion(hash_monolithic(bare, []), [len(data)]),
        list(extras),
        signing_key,
        title=title,
        created_at=created_at,
    )
    return replace(bare, container_manifest=serialize_manifest_store(store))


# ---------------------------------------------------------------------------
# canonical clip


@dataclass(frozen=True)
class FragmentCheck:
    dhs_id: str
    track_id: int
    sequence_number: int
    match: bool
    detail: str = ""


@dataclass(frozen=True)
class CanonicalClip:
    media: MediaObject = field(repr=False)
    checks: tuple[FragmentCheck, ...]
    start_time: float
    end_time: float
    dhs_ids: tuple[str, ...]

    @property
    def valid(self) -> bool:
        return bool(self.checks) and all(c.match for c in self.checks)

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


def produce_canonical_clip(
    response: RecoveryResponse,
    binx: int,
    einx: int,
    replica_fetcher: Callable[[str], bytes],
    *,
    trust: TrustList | None = None,
    time_range: tuple[float, float] | None = None,
) -> CanonicalClip:
    """Walk the DHS entries from BINX to EINX and assemble a validated clip.

    Each replica is fetched through its manifest's asset reference and every
    selected fragment is checked against that manifest before use.
    ``time_range`` (broadcast seconds) narrows selection below cell
    granularity; fragments are never cut.
    """
    d = response.descriptor
    entries = response.entries_for(binx, einx)
    if not entries:
        raise CoverageGap(f"no DHS covers [{binx}, {einx}]")
    cursor = binx
    for e in entries:
        if e.first_interval_code > cursor:
            raise CoverageGap(f"interval codes [{cursor}, {e.first_interval_code - 1}] are not covered")
        cursor = e.last_interval_code + 1
    if cursor <= einx:
        raise CoverageGap(f"interval codes [{cursor}, {einx}] are not covered")

    t0, t1 = time_range if time_range is not None else (d.media_time(binx), d.media_time(einx + 1))
    selected: list[Fragment] = []
    checks: list[FragmentCheck] = []
    stores: list[ManifestStore] = []
    inits = None
    for e in entries:
        try:
            store = response.manifest_store(e)
        except MalformedStore as exc:
            raise CanonicalValidationError(f"DHS {e.dhs_id}: unreadable manifest store: {exc}") from exc
        manifest = store.active
        if manifest.dhs_id != e.dhs_id:
            raise CanonicalValidationError(f"manifest for entry {e.dhs_id} names DHS {manifest.dhs_id}")
        if trust is not None:
            verdict = verify_manifest(store, trust)
            if not verdict.trusted:
                raise CanonicalValidationError(f"DHS {e.dhs_id}: manifest not trusted ({verdict.verdict.value})")
        try:
            replica = parse_media(replica_fetcher(get_asset_reference(manifest).uri))
        except (MalformedBox, MissingAssertion) as exc:
            raise CanonicalValidationError(f"DHS {e.dhs_id}: unusable replica: {exc}") from exc
        if inits is None:
            inits = replica.init_segments
        for frag in replica.fragments:
            ts = replica.init_for(frag.track_id).timescale
            f0, f1 = frag.base_media_decode_time / ts, frag.end_time / ts
            if not (f0 < t1 - 1e-9 and f1 > t0 + 1e-9):
                continue
            try:
                v = validate_binding(manifest, MediaObject(Kind.FRAGMENTED, replica.init_segments, (frag,)))
                check = FragmentCheck(e.dhs_id, frag.track_id, frag.sequence_number, v.match, v.detail)
            except MissingProof as exc:
                check = FragmentCheck(e.dhs_id, frag.track_id, frag.sequence_number, False, str(exc))
            checks.append(check)
            selected.append(frag)
        stores.append(store)

    if not selected:
        raise CoverageGap(f"no replica fragments intersect [{t0}, {t1})")
    merged = serialize_manifest_store(merge_stores(stores))
    order = {init.track_id: n for n, init in enumerate(inits)}
    selected.sort(key=lambda f: (f.base_media_decode_time / _timescale(inits, f.track_id), order[f.track_id]))
    media = MediaObject(Kind.FRAGMENTED, tuple(replace(i, provenance=merged) for i in inits), tuple(selected))
    try:
        check_invariants(media)
    except InvariantViolation as exc:
        raise CanonicalValidationError(f"replica fragments do not form a continuous clip: {exc}") from exc
    clip = CanonicalClip(media, tuple(checks), media.start_time, media.end_time, tuple(e.dhs_id for e in entries))
    if not clip.valid:
        bad = [c for c in checks if not c.match]
        raise CanonicalValidationError(f"{len(bad)} canonical fragments fail validation; first: {bad[0]}", clip)
    return clip


def _timescale(inits: Sequence[InitSegment], track_id: int) -> int:
    for i in inits:
        if i.track_id == track_id:
            return i.timescale
    raise KeyError(track_id)

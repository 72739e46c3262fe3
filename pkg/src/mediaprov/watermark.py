"""Simulated audio watermark channel carrying VP1 payloads.

Cell layout (90 bits, MSB first)::

    sync (24) = 0xB59E27 | server code (31) | interval code (19) | CRC-16 (16)

The CRC is CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) over the 50-bit
payload packed right-aligned into 7 big-endian bytes.  Each bit occupies one
800-sample period of 48 kHz PCM and is written into the least significant bit
of every sample in that period, so a 90-bit cell spans 72000 samples (1.5 s).
Nothing in this module consults keys or trust lists: watermark data is
untrusted until a manifest recovered with it validates.
"""

from __future__ import annotations

import binascii
import math
from dataclasses import dataclass

import numpy as np

from .errors import AnchorAfterSegment, BadSync, CrcMismatch, InsufficientSamples, IntervalOverflow


@dataclass(frozen=True)
class WatermarkParams:
    sample_rate: int = 48000
    period: int = 800
    cell_seconds: float = 1.5
    sync_word: int = 0xB59E27
    sync_bits: int = 24
    server_bits: int = 31
    interval_bits: int = 19
    crc_bits: int = 16
    # fraction of a period's LSBs that must agree for the bit to count as read
    purity: float = 0.9

    @property
    def payload_bits(self) -> int:
        return self.server_bits + self.interval_bits

    @property
    def cell_bits(self) -> int:
        return self.sync_bits + self.payload_bits + self.crc_bits

    @property
    def cell_samples(self) -> int:
        return self.cell_bits * self.period

    def __post_init__(self):
        if self.cell_samples != round(self.cell_seconds * self.sample_rate):
            raise ValueError("cell bits x period must span exactly one cell duration")


PARAMS = WatermarkParams()
SERVER_CODE_MAX = (1 << PARAMS.server_bits) - 1
INTERVAL_CODE_MAX = (1 << PARAMS.interval_bits) - 1


@dataclass(frozen=True, order=True)
class Vp1Payload:
    server_code: int
    interval_code: int

    def __post_init__(self):
        if not 0 <= self.server_code <= SERVER_CODE_MAX:
            raise ValueError(f"server code {self.server_code} does not fit in {PARAMS.server_bits} bits")
        if not 0 <= self.interval_code <= INTERVAL_CODE_MAX:
            raise ValueError(f"interval code {self.interval_code} does not fit in {PARAMS.interval_bits} bits")

    def to_int(self) -> int:
        return (self.server_code << PARAMS.interval_bits) | self.interval_code

    @classmethod
    def from_int(cls, value: int) -> "Vp1Payload":
        return cls(value >> PARAMS.interval_bits, value & INTERVAL_CODE_MAX)

    def advance(self, cells: int) -> "Vp1Payload":
        code = self.interval_code + cells
        if code > INTERVAL_CODE_MAX:
            raise IntervalOverflow(f"interval code would pass {INTERVAL_CODE_MAX}")
        return Vp1Payload(self.server_code, code)


def payload_crc(payload_value: int) -> int:
    return binascii.crc_hqx(payload_value.to_bytes(7, "big"), 0xFFFF)


def _to_bits(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def _from_bits(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


SYNC_BITS = np.array(_to_bits(PARAMS.sync_word, PARAMS.sync_bits), dtype=np.uint8)


@dataclass(frozen=True)
class CellBitstream:
    sync: int
    payload: int
    crc: int

    def bits(self) -> np.ndarray:
        p = PARAMS
        return np.array(
            _to_bits(self.sync, p.sync_bits) + _to_bits(self.payload, p.payload_bits) + _to_bits(self.crc, p.crc_bits),
            dtype=np.uint8,
        )


def encode_cell(payload: Vp1Payload) -> CellBitstream:
    value = payload.to_int()
    return CellBitstream(PARAMS.sync_word, value, payload_crc(value))


def decode_cell(bits) -> Vp1Payload:
    p = PARAMS
    bits = [int(b) for b in bits]
    if len(bits) != p.cell_bits:
        raise BadSync(f"cell must be {p.cell_bits} bits, got {len(bits)}")
    if _from_bits(bits[: p.sync_bits]) != p.sync_word:
        raise BadSync("sync pattern not found")
    value = _from_bits(bits[p.sync_bits : p.sync_bits + p.payload_bits])
    crc = _from_bits(bits[p.sync_bits + p.payload_bits :])
    if payload_crc(value) != crc:
        raise CrcMismatch("cell CRC does not match payload")
    return Vp1Payload.from_int(value)


# ---------------------------------------------------------------------------
# PCM helpers


def pcm_from_bytes(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<i2").astype(np.int16)


def pcm_to_bytes(samples: np.ndarray) -> bytes:
    return np.asarray(samples, dtype="<i2").tobytes()


# ---------------------------------------------------------------------------
# embedding


def embed_watermark(audio: np.ndarray, start: Vp1Payload, cell_count: int, offset: int = 0) -> np.ndarray:
    """Write ``cell_count`` consecutive cells starting at sample ``offset``.

    Cell ``k`` carries ``(start.server_code, start.interval_code + k)``.
    """
    audio = np.asarray(audio, dtype=np.int16)
    if cell_count == 0:
        return audio.copy()
    need = offset + cell_count * PARAMS.cell_samples
    if len(audio) < need:
        raise InsufficientSamples(f"{cell_count} cells need {need} samples, have {len(audio)}")
    start.advance(cell_count - 1)
    bits = np.concatenate([encode_cell(start.advance(k)).bits() for k in range(cell_count)])
    lsb = np.repeat(bits, PARAMS.period).astype(np.int16)
    out = audio.copy()
    region = out[offset:need]
    out[offset:need] = (region & np.int16(-2)) | lsb
    return out


def erase_watermark(audio: np.ndarray) -> np.ndarray:
    return np.asarray(audio, dtype=np.int16) & np.int16(-2)


def rewrite_watermark(audio: np.ndarray, new_start: Vp1Payload, cell_count: int | None = None) -> np.ndarray:
    """Erase every existing cell, then embed a fresh run from sample 0.

    ``cell_count`` defaults to as many whole cells as fit; zero erases only.
    """
    audio = np.asarray(audio, dtype=np.int16)
    if cell_count is None:
        cell_count = len(audio) // PARAMS.cell_samples
    if cell_count * PARAMS.cell_samples > len(audio):
        raise InsufficientSamples(f"{cell_count} cells do not fit in {len(audio)} samples")
    return embed_watermark(erase_watermark(audio), new_start, cell_count)


# ---------------------------------------------------------------------------
# extraction


@dataclass(frozen=True)
class DetectedCell:
    sample_offset: int
    payload: Vp1Payload


@dataclass(frozen=True)
class WatermarkSegment:
    server_code: int
    first_interval_code: int
    last_interval_code: int
    first_cell_sample: int

    @property
    def first_cell_media_offset(self) -> float:
        return self.first_cell_sample / PARAMS.sample_rate

    @property
    def cell_count(self) -> int:
        return self.last_interval_code - self.first_interval_code + 1

    @property
    def end_sample(self) -> int:
        """Sample just past the segment's last complete cell."""
        return self.first_cell_sample + self.cell_count * PARAMS.cell_samples

    @property
    def first_payload(self) -> Vp1Payload:
        return Vp1Payload(self.server_code, self.first_interval_code)

    @property
    def first_recovery_latency(self) -> float:
        """Media time from the clip start until the first payload is fully read."""
        return (self.first_cell_sample + PARAMS.cell_samples) / PARAMS.sample_rate


def detect_cells(audio: np.ndarray, params: WatermarkParams = PARAMS) -> list[DetectedCell]:
    audio = np.asarray(audio, dtype=np.int16)
    n = len(audio)
    period, cell = params.period, params.cell_samples
    if n < cell:
        return []
    lsb = (audio & 1).astype(np.int32)
    cs = np.concatenate(([0], np.cumsum(lsb)))
    ones = cs[period:] - cs[:-period]  # ones[o] = set LSBs in [o, o + period)
    need = math.ceil(params.purity * period)
    hi = ones >= need
    lo = ones <= period - need
    last_start = n - cell

    sync = [int(b) for b in SYNC_BITS]
    cand = np.flatnonzero((hi if sync[0] else lo)[: last_start + 1])
    for k, bit in enumerate(sync[1:], start=1):
        if not cand.size:
            return []
        cand = cand[(hi if bit else lo)[cand + k * period]]
    if not cand.size:
        return []

    steps = np.arange(params.cell_bits) * period
    groups = np.split(cand, np.flatnonzero(np.diff(cand) > period // 2) + 1)
    cells: list[DetectedCell] = []
    for group in groups:
        windows = ones[group[:, None] + steps[None, :]]
        score = np.abs(windows - period / 2).sum(axis=1)
        best = int(group[int(np.argmax(score))])
        row = ones[best + steps]
        if not np.all((row >= need) | (row <= period - need)):
            continue
        try:
            payload = decode_cell((row >= need).astype(np.uint8))
        except (BadSync, CrcMismatch):
            continue
        if cells and best - cells[-1].sample_offset < cell:
            continue
        cells.append(DetectedCell(best, payload))
    return cells


def group_segments(cells: list[DetectedCell], params: WatermarkParams = PARAMS) -> list[WatermarkSegment]:
    """Session-layer grouping: constant server code, incrementing interval codes, back-to-back cells."""
    segments: list[WatermarkSegment] = []
    tol = params.period // 10
    start = prev = None
    for c in cells:
        contiguous = (
            prev is not None
            and c.payload.server_code == prev.payload.server_code
            and c.payload.interval_code == prev.payload.interval_code + 1
            and abs(c.sample_offset - prev.sample_offset - params.cell_samples) <= tol
        )
        if not contiguous:
            if start is not None:
                segments.append(_segment(start, prev))
            start = c
        prev = c
    if start is not None:
        segments.append(_segment(start, prev))
    return segments


def _segment(first: DetectedCell, last: DetectedCell) -> WatermarkSegment:
    return WatermarkSegment(
        first.payload.server_code, first.payload.interval_code, last.payload.interval_code, first.sample_offset
    )


def extract_segments(audio: np.ndarray) -> list[WatermarkSegment]:
    return group_segments(detect_cells(audio))


# ---------------------------------------------------------------------------
# timeline


def map_timeline(segment: WatermarkSegment, anchor_interval_code: int, anchor_media_time: float) -> tuple[float, float]:
    """Broadcast-timeline span ``[start, end)`` of the segment's complete cells."""
    if segment.first_interval_code < anchor_interval_code:
        raise AnchorAfterSegment(
            f"anchor {anchor_interval_code} is after segment start {segment.first_interval_code}"
        )
    d = PARAMS.cell_seconds
    start = anchor_media_time + (segment.first_interval_code - anchor_interval_code) * d
    end = anchor_media_time + (segment.last_interval_code + 1 - anchor_interval_code) * d
    return start, end


def interval_code_at(media_time: float, anchor_interval_code: int, anchor_media_time: float) -> int:
    """Interval code of the cell containing ``media_time`` on the broadcast timeline."""
    return anchor_interval_code + math.floor((media_time - anchor_media_time) / PARAMS.cell_seconds + 1e-9)


def clip_interval_range(segment: WatermarkSegment, region_start: int, region_end: int) -> tuple[int, int]:
    """Interval codes of the cells holding the first and last sample of ``[region_start, region_end)``.

    Sample positions are relative to the analysed audio; partial cells at
    either edge round outward.
    """
    cell = PARAMS.cell_samples
    rel_start = region_start - segment.first_cell_sample
    rel_last = region_end - 1 - segment.first_cell_sample
    return (
        segment.first_interval_code + math.floor(rel_start / cell),
        segment.first_interval_code + math.floor(rel_last / cell),
    )

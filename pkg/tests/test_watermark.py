import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mediaprov.errors import AnchorAfterSegment, BadSync, CrcMismatch, InsufficientSamples, IntervalOverflow
from mediaprov.watermark import (
    INTERVAL_CODE_MAX,
    PARAMS,
    SERVER_CODE_MAX,
    Vp1Payload,
    clip_interval_range,
    decode_cell,
    embed_watermark,
    encode_cell,
    extract_segments,
    interval_code_at,
    map_timeline,
    payload_crc,
    rewrite_watermark,
)

from scenarios import noise_audio

CELL = PARAMS.cell_samples


def crc_ccitt_false(data: bytes) -> int:
    """Bit-at-a-time CRC-16/CCITT-FALSE, poly 0x1021, init 0xFFFF, no reflection."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else crc << 1
            crc &= 0xFFFF
    return crc


def test_channel_geometry():
    assert PARAMS.cell_bits == 90
    assert CELL == 72000 == 1.5 * 48000
    assert (SERVER_CODE_MAX, INTERVAL_CODE_MAX) == (2**31 - 1, 2**19 - 1)


def test_crc_matches_independent_oracle():
    assert crc_ccitt_false(b"123456789") == 0x29B1
    rng = np.random.default_rng(0)
    for value in [0, 1, (1 << 50) - 1] + [int(x) for x in rng.integers(0, 1 << 50, 500, dtype=np.int64)]:
        assert payload_crc(value) == crc_ccitt_false(value.to_bytes(7, "big"))


def test_zero_payload():
    cell = encode_cell(Vp1Payload(0, 0))
    bits = cell.bits()
    assert bits[24:74].sum() == 0
    assert cell.crc == crc_ccitt_false(bytes(7))
    assert decode_cell(bits) == Vp1Payload(0, 0)


@settings(max_examples=300)
@given(st.integers(0, SERVER_CODE_MAX), st.integers(0, INTERVAL_CODE_MAX))
def test_cell_round_trip(server, interval):
    p = Vp1Payload(server, interval)
    assert decode_cell(encode_cell(p).bits()) == p
    assert Vp1Payload.from_int(p.to_int()) == p


def test_every_single_bit_flip_is_rejected():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = Vp1Payload(int(rng.integers(0, SERVER_CODE_MAX)), int(rng.integers(0, INTERVAL_CODE_MAX)))
        bits = encode_cell(p).bits()
        for i in range(24, 90):
            b = bits.copy()
            b[i] ^= 1
            with pytest.raises(CrcMismatch):
                decode_cell(b)
        b = bits.copy()
        b[3] ^= 1
        with pytest.raises(BadSync):
            decode_cell(b)


def test_payload_limits():
    with pytest.raises(ValueError):
        Vp1Payload(SERVER_CODE_MAX + 1, 0)
    with pytest.raises(IntervalOverflow):
        Vp1Payload(1, INTERVAL_CODE_MAX).advance(1)
    with pytest.raises(IntervalOverflow):
        embed_watermark(np.zeros(3 * CELL, np.int16), Vp1Payload(1, INTERVAL_CODE_MAX - 1), 3)
    with pytest.raises(InsufficientSamples):
        embed_watermark(np.zeros(CELL, np.int16), Vp1Payload(1, 0), 2)


def test_embedding_is_lsb_only_and_zero_cells_is_identity():
    audio = noise_audio(4 * CELL, 3)
    assert np.array_equal(embed_watermark(audio, Vp1Payload(5, 9), 0), audio)
    marked = embed_watermark(audio, Vp1Payload(5, 9), 4)
    assert np.abs(marked.astype(np.int32) - audio).max() <= 1


def test_loopback():
    audio = noise_audio(10 * CELL, 4)
    marked = embed_watermark(audio, Vp1Payload(777, 40), 10)
    (seg,) = extract_segments(marked)
    assert (seg.server_code, seg.first_interval_code, seg.last_interval_code) == (777, 40, 49)
    assert seg.first_cell_sample == 0 and seg.end_sample == 10 * CELL


def test_noise_has_no_false_positives():
    for seed in range(100):
        assert extract_segments(noise_audio(3 * CELL, 1000 + seed)) == []


def test_mid_cell_start_reports_first_complete_cell():
    marked = embed_watermark(noise_audio(8 * CELL, 5), Vp1Payload(3, 100), 8)
    cut = marked[CELL // 3 :]
    (seg,) = extract_segments(cut)
    assert seg.first_interval_code == 101
    assert seg.first_cell_sample == CELL - CELL // 3
    assert seg.last_interval_code == 107


def test_splice_of_two_sources_gives_two_segments():
    a = embed_watermark(noise_audio(6 * CELL, 6), Vp1Payload(11, 200), 6)
    b = embed_watermark(noise_audio(6 * CELL, 7), Vp1Payload(22, 5000), 6)
    spliced = np.concatenate([a[CELL // 2 :], b[CELL // 4 :]])
    segs = extract_segments(spliced)
    assert [(s.server_code, s.first_interval_code, s.last_interval_code) for s in segs] == [
        (11, 201, 205),
        (22, 5001, 5005),
    ]


def test_same_server_jump_splits_segments():
    a = embed_watermark(noise_audio(4 * CELL, 8), Vp1Payload(11, 100), 4)
    b = embed_watermark(noise_audio(4 * CELL, 9), Vp1Payload(11, 300), 4)
    segs = extract_segments(np.concatenate([a, b]))
    assert [(s.first_interval_code, s.last_interval_code) for s in segs] == [(100, 103), (300, 303)]


def test_timeline_mapping():
    marked = embed_watermark(noise_audio(3 * CELL, 10), Vp1Payload(1, 1013), 3)
    (seg,) = extract_segments(marked)
    assert map_timeline(seg, 1000, 0.0) == (19.5, 24.0)
    assert map_timeline(seg, 1013, 7.0)[0] == 7.0
    assert interval_code_at(30.2, 5000, 0.0) == 5020
    assert interval_code_at(30.0, 5000, 0.0) == 5020
    with pytest.raises(AnchorAfterSegment):
        map_timeline(seg, 1014, 0.0)
    # region starting half a cell before the first complete cell rounds outward
    assert clip_interval_range(seg, 0, 3 * CELL) == (1013, 1015)


def test_rewrite():
    audio = embed_watermark(noise_audio(6 * CELL, 11), Vp1Payload(50, 10), 6)
    assert extract_segments(rewrite_watermark(audio, Vp1Payload(60, 0), 0)) == []
    once = rewrite_watermark(audio, Vp1Payload(60, 700))
    assert [(s.server_code, s.first_interval_code) for s in extract_segments(once)] == [(60, 700)]
    twice = rewrite_watermark(once, Vp1Payload(61, 900), 6)
    (seg,) = extract_segments(twice)
    assert (seg.server_code, seg.first_interval_code, seg.last_interval_code) == (61, 900, 905)


def test_first_payload_latency():
    marked = embed_watermark(noise_audio(12 * CELL, 12), Vp1Payload(9, 0), 12)
    rng = np.random.default_rng(13)
    latencies = []
    for start in rng.integers(0, 4 * CELL, 200):
        (seg,) = extract_segments(marked[start:])
        assert seg.first_recovery_latency <= 2 * PARAMS.cell_seconds
        latencies.append(seg.first_recovery_latency)
    # uniform start within a cell: mean wait is half a cell plus one cell read
    assert abs(np.mean(latencies) - 2.25) < 0.1

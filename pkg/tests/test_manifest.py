import hashlib
import random
from dataclasses import replace

import cbor2
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mediaprov.binding import build_merkle, hash_fragment
from mediaprov.bmff import Kind, MediaObject
from mediaprov.errors import (
    DuplicateHardBinding,
    MalformedStore,
    MissingAssertion,
    MissingProof,
    UnknownDistributor,
    UnsupportedVersion,
)
from mediaprov.manifest import (
    ASSET_REFERENCE,
    MERKLE,
    AssetReference,
    ClaimSignature,
    ProofRecord,
    TrustList,
    Verdict,
    create_manifest,
    get_asset_reference,
    key_from_seed,
    load_key,
    merge_stores,
    metadata_assertion,
    monolithic_assertion,
    parse_manifest_store,
    public_key_bytes,
    save_key,
    serialize_manifest_store,
    validate_binding,
    validate_store_binding,
    verify_manifest,
    watermark_assertion,
)
from mediaprov.pipeline import BroadcastConfig, produce_replica, synthetic_source
from mediaprov.recovery import server_authority

from scenarios import ATTACKER_KEY, BROADCASTER_KEY, CREATED, DISTRIBUTOR, broadcast, standard_trust


@pytest.fixture(scope="module")
def dhs():
    # 20 one-and-a-half-second fragments per track; 2 fps keeps frames whole
    cfg = BroadcastConfig(31, 500, DISTRIBUTOR, BROADCASTER_KEY, fragment_duration=1.5, video_fps=2, created_at=CREATED)
    return next(produce_replica(synthetic_source(30.0, seed=2, fps=2), cfg))


@pytest.fixture(scope="module")
def trust():
    return standard_trust()


def test_create_then_verify_trusted(dhs, trust):
    r = verify_manifest(dhs.store, trust)
    assert r.verdict is Verdict.TRUSTED and r.distributor_id == DISTRIBUTOR


def test_two_hard_bindings_rejected():
    mono = monolithic_assertion(b"\x00" * 32, [])
    with pytest.raises(DuplicateHardBinding):
        create_manifest(DISTRIBUTOR, mono, [mono], BROADCASTER_KEY, created_at=CREATED)


def test_claim_digests_match_independent_hashes(dhs):
    m = dhs.store.active
    raw = serialize_manifest_store(dhs.store)
    # walk the store by hand: every cbor box inside an asrt carries an assertion body
    bodies = {}

    def boxes(buf, start, end):
        p = start
        while p < end:
            size = int.from_bytes(buf[p : p + 4], "big")
            yield buf[p + 4 : p + 8].decode(), p + 8, p + size
            p += size

    for kind, s, e in boxes(raw, 0, len(raw)):
        for k2, s2, e2 in boxes(raw, s, e):
            if k2 != "mani":
                continue
            for k3, s3, e3 in boxes(raw, s2, e2):
                if k3 != "asst":
                    continue
                for _, s4, e4 in boxes(raw, s3, e3):
                    parts = {k: raw[a:b] for k, a, b in boxes(raw, s4, e4)}
                    bodies[parts["labl"].decode()] = hashlib.sha256(parts["cbor"]).digest()
    assert bodies == dict(m.claim.assertion_digests)
    assert len(bodies) == 4


def test_store_round_trip_and_truncation(dhs):
    raw = dhs.manifest_store
    assert serialize_manifest_store(parse_manifest_store(raw)) == raw
    with pytest.raises(MalformedStore):
        parse_manifest_store(raw[:-1])
    with pytest.raises(MalformedStore):
        parse_manifest_store(b"")
    bumped = bytearray(raw)
    # version byte is the first body byte of the pmsh box at offset 8
    assert bumped[12:16] == b"pmsh"
    bumped[16] = 2
    with pytest.raises(UnsupportedVersion):
        parse_manifest_store(bytes(bumped))


@st.composite
def stores(draw):
    manifests = []
    store = None
    for _ in range(draw(st.integers(1, 3))):
        key = key_from_seed(draw(st.binary(min_size=32, max_size=32)))
        mono = monolithic_assertion(draw(st.binary(min_size=32, max_size=32)), draw(st.lists(st.integers(0, 10**6), max_size=2)))
        extras = []
        if draw(st.booleans()):
            extras.append(watermark_assertion(draw(st.integers(0, 2**31 - 1)), 0, draw(st.integers(0, 1000))))
        if draw(st.booleans()):
            extras.append(AssetReference("https://a.test/" + draw(st.text(st.characters(min_codepoint=97, max_codepoint=122), max_size=12)), 1.5, None).to_assertion())
        if draw(st.booleans()):
            extras.append(metadata_assertion(note=draw(st.text(max_size=10))))
        store = create_manifest(
            draw(st.text(min_size=1, max_size=12)), mono, extras, key,
            title=draw(st.text(max_size=12)), created_at=CREATED, store=store,
        )
    return store


@settings(max_examples=150, deadline=None)
@given(stores())
def test_store_round_trip_property(store):
    raw = serialize_manifest_store(store)
    parsed = parse_manifest_store(raw)
    assert parsed == store
    assert serialize_manifest_store(parsed) == raw


def test_trust_verdicts(dhs, trust):
    stranger = create_manifest(
        "stranger", monolithic_assertion(b"\x01" * 32, []), [], ATTACKER_KEY, created_at=CREATED
    )
    assert verify_manifest(stranger, trust).verdict is Verdict.UNKNOWN_DISTRIBUTOR
    forged = create_manifest(
        DISTRIBUTOR, monolithic_assertion(b"\x01" * 32, []), [], ATTACKER_KEY, created_at=CREATED
    )
    assert verify_manifest(forged, trust).verdict is Verdict.BAD_SIGNATURE
    pending = TrustList.from_bytes(trust.to_bytes())
    pending.approve(DISTRIBUTOR, False)
    assert verify_manifest(dhs.store, pending).verdict is Verdict.UNKNOWN_DISTRIBUTOR


def test_flipped_signature_byte_is_bad_signature(dhs, trust):
    rng = random.Random(5)
    m = dhs.store.active
    for _ in range(100):
        sig = bytearray(m.signature.signature)
        sig[rng.randrange(len(sig))] ^= 1 << rng.randrange(8)
        bad = replace(m, signature=ClaimSignature(m.signature.algorithm, m.signature.signer_key_id, bytes(sig)))
        assert verify_manifest(bad, trust).verdict is Verdict.BAD_SIGNATURE


def test_tampered_assertion_body_is_malformed_claim(dhs, trust):
    m = dhs.store.active
    ref = m.assertion(ASSET_REFERENCE)
    other = AssetReference("https://evil.example/x").to_assertion()
    swapped = replace(m, assertions=tuple(other if a is ref else a for a in m.assertions))
    assert verify_manifest(swapped, trust).verdict is Verdict.MALFORMED_CLAIM


def test_binding_untouched_and_flipped(dhs):
    assert validate_binding(dhs.store.active, dhs.replica).match
    frags = list(dhs.replica.fragments)
    data = bytearray(frags[5].sample_data)
    data[17] ^= 0x40
    frags[5] = replace(frags[5], sample_data=bytes(data))
    v = validate_binding(dhs.store.active, replace(dhs.replica, fragments=tuple(frags)))
    assert not v.match and "fails inclusion" in v.detail


def test_partial_range_uses_only_its_proofs(dhs):
    m = dhs.store.active
    assert [len(dhs.replica.fragments_for(t)) for t in (1, 2)] == [20, 20]
    # fragments 3 and 4 of each track, carried alone
    sub = [f for t in (1, 2) for f in dhs.replica.fragments_for(t)[3:5]]
    part = MediaObject(Kind.FRAGMENTED, dhs.replica.init_segments, tuple(sorted(sub, key=lambda f: (f.sequence_number, f.track_id))))
    v = validate_binding(m, part)
    assert v.match and v.fragments_checked == 4
    # full-rebuild oracle agrees
    for t in (1, 2):
        row = {r["track"]: r for r in m.assertion(MERKLE).value["rows"]}[t]
        assert build_merkle([hash_fragment(f) for f in dhs.replica.fragments_for(t)]).root == row["root"]
    ranged = validate_binding(m, dhs.replica, fragment_range=(3, 4))
    assert ranged.match and ranged.fragments_checked == 4


def test_binding_rejects_reordered_or_foreign_fragments(dhs):
    m = dhs.store.active
    a = dhs.replica.fragments_for(1)
    v = dhs.replica.fragments_for(2)
    inits = dhs.replica.init_segments
    gap = MediaObject(Kind.FRAGMENTED, inits, (a[2], v[2], a[4], v[4]))
    assert "leaf order" in validate_binding(m, gap).detail
    # fragment 4's essence carried under fragment 3's proof
    moved = replace(a[4], provenance=a[3].provenance)
    assert not validate_binding(m, MediaObject(Kind.FRAGMENTED, inits, (moved, v[4]))).match
    missing = MediaObject(Kind.FRAGMENTED, inits, (replace(a[0], provenance=None), v[0]))
    with pytest.raises(MissingProof):
        validate_binding(m, missing)
    with pytest.raises(MissingProof):
        ProofRecord.from_bytes(b"\xff")


def test_store_binding_across_two_dhs():
    _, stream = broadcast(77, duration=60.0, seed=8)
    merged = merge_stores([stream[0].store, stream[1].store])
    frags = stream[0].replica.fragments[-4:] + stream[1].replica.fragments[:4]
    obj = MediaObject(Kind.FRAGMENTED, stream[0].replica.init_segments, frags)
    v = validate_store_binding(merged, obj)
    assert v.match and v.fragments_checked == 8
    assert not validate_store_binding(stream[0].store, obj).match


def test_asset_reference(dhs):
    ref = get_asset_reference(dhs.store.active)
    assert ref.uri == "https://wm-aaaaahy.wm.test/assets/0000001f-000500"
    assert (ref.media_time_start, ref.media_time_end) == (0.0, 30.0)
    bare = create_manifest(DISTRIBUTOR, monolithic_assertion(b"\x00" * 32, []), [], BROADCASTER_KEY, created_at=CREATED)
    with pytest.raises(MissingAssertion):
        get_asset_reference(bare.active)


def test_trust_list_and_key_files(tmp_path, trust):
    path = tmp_path / "trust.cbor"
    trust.save(path)
    again = TrustList.load(path)
    assert again.to_bytes() == trust.to_bytes()
    decoded = cbor2.loads(path.read_bytes())
    assert decoded["version"] == 1 and DISTRIBUTOR in decoded["entries"]
    assert again.registered_authority(server_authority(12345, "wm.test").upper() + ".") == DISTRIBUTOR
    assert again.registered_authority(server_authority(777, "wm.test")) is None
    save_key(tmp_path / "k", BROADCASTER_KEY)
    assert public_key_bytes(load_key(tmp_path / "k")) == public_key_bytes(BROADCASTER_KEY)


def test_create_refuses_unlisted_signer(trust):
    with pytest.raises(UnknownDistributor):
        create_manifest(DISTRIBUTOR, monolithic_assertion(b"\x00" * 32, []), [], ATTACKER_KEY, trust=trust)

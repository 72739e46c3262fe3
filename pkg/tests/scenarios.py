"""Shared broadcast worlds for tests.

One registry holds several broadcasts that differ in how trustworthy they are:

====== ============= ==========================================================
code   name          property
====== ============= ==========================================================
12345  main          90 s, three DHS, signed by the registered broadcaster
777    rogue         authority not on the trust list
888    forger        authority listed, manifests signed by an unlisted key
999    assetless     trusted manifests, replicas never uploaded
555    tampered      trusted manifests, one stored replica fragment altered
====== ============= ==========================================================
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from mediaprov.bmff import Kind, MediaObject, serialize_media
from mediaprov.manifest import TrustList, key_from_seed, public_key_bytes
from mediaprov.pipeline import (
    BroadcastConfig,
    perturb_essence,
    produce_replica,
    publish_stream,
    sign_monolithic,
    simulate_capture,
    synthetic_source,
)
from mediaprov.recovery import DhsRegistry, LocalRecoveryClient, server_authority
from mediaprov.validator import CanonicalDecision, PlatformPolicy, validate_media_object
from mediaprov.watermark import erase_watermark, pcm_from_bytes, pcm_to_bytes

DOMAIN = "wm.test"
DISTRIBUTOR = "broadcaster-1"
CREATED = "2026-01-01T00:00:00Z"
BROADCASTER_KEY = key_from_seed(bytes(range(32)))
ATTACKER_KEY = key_from_seed(bytes(range(100, 132)))

MAIN, ROGUE, FORGER, ASSETLESS, TAMPERED = 12345, 777, 888, 999, 555
MAIN_START = 1000

APPROVAL_PENDING = PlatformPolicy(canonical_decision=CanonicalDecision.REQUIRE_APPROVAL)


def broadcast(server_code, *, duration=30.0, seed=0, start_code=0, key=BROADCASTER_KEY, distributor=DISTRIBUTOR,
              dhs_cells=20, fragment_duration=2.0):
    cfg = BroadcastConfig(
        server_code,
        start_code,
        distributor,
        key,
        base_domain=DOMAIN,
        dhs_cell_count=dhs_cells,
        fragment_duration=fragment_duration,
        created_at=CREATED,
    )
    return cfg, list(produce_replica(synthetic_source(duration, seed), cfg))


def map_audio(obj: MediaObject, fn) -> MediaObject:
    tid = obj.audio_track_id()
    return replace(
        obj,
        fragments=tuple(
            replace(f, sample_data=pcm_to_bytes(fn(pcm_from_bytes(f.sample_data)))) if f.track_id == tid else f
            for f in obj.fragments
        ),
    )


def unmark(obj: MediaObject) -> MediaObject:
    return map_audio(obj, erase_watermark)


def flip_essence_byte(obj: MediaObject, fragment_index: int, byte_index: int, mask: int = 0x01) -> MediaObject:
    frags = list(obj.fragments)
    f = frags[fragment_index]
    data = bytearray(f.sample_data)
    data[byte_index % len(data)] ^= mask
    frags[fragment_index] = replace(f, sample_data=bytes(data))
    return replace(obj, fragments=tuple(frags))


def splice(a: MediaObject, b: MediaObject) -> MediaObject:
    """Two monolithic clips played back to back, as one monolithic object."""
    frags = []
    for tid in a.track_ids:
        fa, fb = a.fragments_for(tid)[0], b.fragments_for(tid)[0]
        sizes = None
        if fa.sample_sizes is not None or fb.sample_sizes is not None or fa.sizes()[0] != fb.sizes()[0]:
            sizes = tuple(fa.sizes()) + tuple(fb.sizes())
        frags.append(
            replace(fa, sample_count=fa.sample_count + fb.sample_count, sample_data=fa.sample_data + fb.sample_data,
                    sample_sizes=sizes)
        )
    return MediaObject(Kind.MONOLITHIC, a.init_segments, tuple(frags))


@dataclass
class Environment:
    registry: DhsRegistry
    trust: TrustList
    streams: dict

    @property
    def client(self) -> LocalRecoveryClient:
        return LocalRecoveryClient(self.registry, DOMAIN)

    def capture(self, server_code: int, start: float, end: float) -> MediaObject:
        return simulate_capture(self.streams[server_code], start, end)

    def validate(self, obj, policy=PlatformPolicy(), approve=False, client=None):
        return validate_media_object(obj, self.trust, client or self.client, policy, approve=approve)


def standard_trust() -> TrustList:
    trust = TrustList()
    trust.add(
        DISTRIBUTOR,
        public_key_bytes(BROADCASTER_KEY),
        [server_authority(c, DOMAIN) for c in (MAIN, FORGER, ASSETLESS, TAMPERED)],
        approved=True,
    )
    return trust


def standard_environment(root=None) -> Environment:
    registry = DhsRegistry(root)
    streams = {}
    _, streams[MAIN] = broadcast(MAIN, duration=90.0, seed=1, start_code=MAIN_START)
    _, streams[ROGUE] = broadcast(ROGUE, seed=2, distributor="rogue-tv", key=ATTACKER_KEY)
    _, streams[FORGER] = broadcast(FORGER, seed=3, key=ATTACKER_KEY)
    _, streams[ASSETLESS] = broadcast(ASSETLESS, seed=4)
    _, streams[TAMPERED] = broadcast(TAMPERED, seed=5)
    for code, stream in streams.items():
        if code == ASSETLESS:
            for d in stream:
                registry.publish(d.record(), None)
        else:
            publish_stream(stream, registry)
    # fragment index 6 is the audio fragment covering 6..8 s
    bad = flip_essence_byte(streams[TAMPERED][0].replica, 6, 1234)
    registry.replace_asset(streams[TAMPERED][0].dhs_id, serialize_media(bad))
    return Environment(registry, standard_trust(), streams)


def perturbed(obj: MediaObject, seed: int = 0) -> MediaObject:
    return perturb_essence(obj, seed)


def noise_audio(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(-20000, 20000, n).astype(np.int16)


# ---------------------------------------------------------------------------
# one fixture per complete path through the validation graph


@dataclass(frozen=True)
class PathCase:
    name: str
    obj: MediaObject
    policy: PlatformPolicy = PlatformPolicy()


def _wrap(prefix: str, obj: MediaObject) -> MediaObject:
    if prefix == "plain":
        return obj
    if prefix == "unregistered":
        return sign_monolithic(obj, "stranger-tv", ATTACKER_KEY, created_at=CREATED)
    if prefix == "forged":
        return sign_monolithic(obj, DISTRIBUTOR, ATTACKER_KEY, created_at=CREATED)
    raise ValueError(prefix)


def path_cases(env: Environment) -> list[PathCase]:
    main = env.capture(MAIN, 20.0, 40.0)
    suffixes = [
        ("unmarked", unmark(main), PlatformPolicy()),
        ("rogue", env.capture(ROGUE, 4.0, 16.0), PlatformPolicy()),
        ("forger", env.capture(FORGER, 4.0, 16.0), PlatformPolicy()),
        ("untouched", main, PlatformPolicy()),
        ("declined", perturbed(main, 1), APPROVAL_PENDING),
        ("assetless", perturbed(env.capture(ASSETLESS, 4.0, 16.0), 2), PlatformPolicy()),
        ("tampered", perturbed(env.capture(TAMPERED, 4.0, 16.0), 3), PlatformPolicy()),
        ("canonical", perturbed(main, 4), PlatformPolicy()),
    ]
    cases = [PathCase("embedded", sign_monolithic(main, DISTRIBUTOR, BROADCASTER_KEY, created_at=CREATED))]
    for prefix in ("plain", "unregistered", "forged"):
        for name, obj, policy in suffixes:
            cases.append(PathCase(f"{prefix}/{name}", _wrap(prefix, obj), policy))
    return cases

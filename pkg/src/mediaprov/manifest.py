"""Content-credential style manifests.

A manifest is an assertion store, a claim listing the digest of every
assertion, and an Ed25519 signature over the claim's canonical CBOR bytes.
Manifests are collected in a manifest store serialized as nested boxes::

    pmst
      pmsh          u8 version, u32 active manifest index
      mani*
        asst
          asrt*
            labl    UTF-8 label
            cbor    canonical CBOR assertion body
        clam        canonical CBOR claim
        csig        canonical CBOR {"alg", "kid", "sig"}
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence
from urllib.parse import urlsplit

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from . import cbor
from .binding import (
    ALGORITHM,
    InclusionProof,
    MerkleRow,
    hash_fragment,
    hash_init_segment,
    manifest_exclusions,
    sha256,
    skip_hash,
    verify_inclusion,
)
from .bmff import MANIFEST_STORE_BOX, Kind, MediaObject, encode_box, iter_boxes, serialize_media
from .errors import (
    DuplicateHardBinding,
    InvariantViolation,
    MalformedBox,
    MalformedStore,
    MissingAssertion,
    MissingProof,
    UnknownDistributor,
    UnsupportedVersion,
)

MEDIA_TYPE = "application/x-provenance-manifest-store"
STORE_VERSION = 1
SIGNATURE_ALGORITHM = "ed25519"

MERKLE = "bmff.hash.merkle"
MONOLITHIC = "bmff.hash.monolithic"
WATERMARK = "soft.watermark.vp1"
ASSET_REFERENCE = "asset.reference"
METADATA = "content.metadata"

HARD_BINDINGS = (MERKLE, MONOLITHIC)


# ---------------------------------------------------------------------------
# assertion schemas


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise InvariantViolation(msg)


def _is_digest(x: Any) -> bool:
    return isinstance(x, bytes) and len(x) == 32


def _check_merkle(v: Any) -> None:
    _require(isinstance(v, dict) and set(v) == {"alg", "dhs", "rows"}, "merkle binding keys")
    _require(v["alg"] == ALGORITHM and isinstance(v["dhs"], str), "merkle binding alg/dhs")
    _require(isinstance(v["rows"], list) and v["rows"], "merkle binding needs rows")
    for row in v["rows"]:
        _require(isinstance(row, dict) and set(row) == {"track", "count", "root", "init"}, "merkle row keys")
        _require(isinstance(row["track"], int) and isinstance(row["count"], int) and row["count"] >= 1, "merkle row ints")
        _require(_is_digest(row["root"]) and _is_digest(row["init"]), "merkle row digests")


def _check_monolithic(v: Any) -> None:
    _require(isinstance(v, dict) and set(v) == {"alg", "hash", "exclusions"}, "monolithic binding keys")
    _require(v["alg"] == ALGORITHM and _is_digest(v["hash"]), "monolithic binding alg/hash")
    _require(
        isinstance(v["exclusions"], list)
        and all(isinstance(e, dict) and set(e) == {"start"} and isinstance(e["start"], int) for e in v["exclusions"]),
        "monolithic exclusions",
    )


def _check_watermark(v: Any) -> None:
    _require(isinstance(v, dict) and set(v) == {"server", "binx", "einx"}, "watermark assertion keys")
    _require(all(isinstance(v[k], int) for k in v) and v["binx"] <= v["einx"], "watermark assertion values")


def _check_reference(v: Any) -> None:
    _require(isinstance(v, dict) and "uri" in v and set(v) <= {"uri", "start", "end"}, "asset reference keys")
    _require(isinstance(v["uri"], str) and bool(urlsplit(v["uri"]).scheme), "asset reference uri must be absolute")


def _check_metadata(v: Any) -> None:
    _require(isinstance(v, dict) and all(isinstance(k, str) for k in v), "metadata must be a string-keyed map")


_SCHEMAS = {
    MERKLE: _check_merkle,
    MONOLITHIC: _check_monolithic,
    WATERMARK: _check_watermark,
    ASSET_REFERENCE: _check_reference,
    METADATA: _check_metadata,
}


@dataclass(frozen=True)
class Assertion:
    label: str
    body: bytes = field(repr=False)

    def __post_init__(self):
        if self.label not in _SCHEMAS:
            raise InvariantViolation(f"unknown assertion label {self.label!r}")
        try:
            value = cbor.loads_canonical(self.body)
        except cbor.NonCanonicalCbor as exc:
            raise InvariantViolation(f"{self.label}: {exc}") from exc
        _SCHEMAS[self.label](value)

    @classmethod
    def of(cls, label: str, value: Any) -> "Assertion":
        return cls(label, cbor.dumps(value))

    @property
    def value(self) -> Any:
        return cbor.loads(self.body)

    @property
    def digest(self) -> bytes:
        return sha256(self.body)


def merkle_assertion(dhs_id: str, rows: Sequence[MerkleRow], init_hashes: Mapping[int, bytes]) -> Assertion:
    return Assertion.of(
        MERKLE,
        {
            "alg": ALGORITHM,
            "dhs": dhs_id,
            "rows": [
                {"track": r.track_id, "count": r.leaf_count, "root": r.root, "init": init_hashes[r.track_id]}
                for r in rows
            ],
        },
    )


def monolithic_assertion(digest: bytes, exclusion_starts: Sequence[int]) -> Assertion:
    return Assertion.of(
        MONOLITHIC,
        {"alg": ALGORITHM, "hash": digest, "exclusions": [{"start": s} for s in exclusion_starts]},
    )


def watermark_assertion(server_code: int, binx: int, einx: int) -> Assertion:
    return Assertion.of(WATERMARK, {"server": server_code, "binx": binx, "einx": einx})


@dataclass(frozen=True)
class AssetReference:
    uri: str
    media_time_start: float | None = None
    media_time_end: float | None = None

    def to_assertion(self) -> Assertion:
        value: dict[str, Any] = {"uri": self.uri}
        if self.media_time_start is not None:
            value["start"] = float(self.media_time_start)
        if self.media_time_end is not None:
            value["end"] = float(self.media_time_end)
        return Assertion.of(ASSET_REFERENCE, value)


def metadata_assertion(**fields: Any) -> Assertion:
    return Assertion.of(METADATA, dict(fields))


# ---------------------------------------------------------------------------
# claims and manifests


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Claim:
    distributor_id: str
    title: str
    assertion_digests: tuple[tuple[str, bytes], ...]
    created_at: str
    dhs_range: tuple[int, int] | None = None

    def to_map(self) -> dict:
        return {
            "distributor": self.distributor_id,
            "title": self.title,
            "assertions": [[label, digest] for label, digest in self.assertion_digests],
            "created": self.created_at,
            "dhs": list(self.dhs_range) if self.dhs_range is not None else None,
        }

    @classmethod
    def from_map(cls, m: Any) -> "Claim":
        if not isinstance(m, dict) or set(m) != {"distributor", "title", "assertions", "created", "dhs"}:
            raise MalformedStore("claim has unexpected keys")
        try:
            digests = tuple((str(lbl), bytes(d)) for lbl, d in m["assertions"])
            dhs = m["dhs"]
            return cls(
                m["distributor"],
                m["title"],
                digests,
                m["created"],
                None if dhs is None else (int(dhs[0]), int(dhs[1])),
            )
        except (TypeError, ValueError, IndexError) as exc:
            raise MalformedStore(f"bad claim field: {exc}") from exc

    def to_bytes(self) -> bytes:
        return cbor.dumps(self.to_map())


@dataclass(frozen=True)
class ClaimSignature:
    algorithm: str
    signer_key_id: str
    signature: bytes = field(repr=False)

    def to_bytes(self) -> bytes:
        return cbor.dumps({"alg": self.algorithm, "kid": self.signer_key_id, "sig": self.signature})


@dataclass(frozen=True)
class Manifest:
    assertions: tuple[Assertion, ...]
    claim: Claim
    signature: ClaimSignature

    def assertion(self, label: str) -> Assertion | None:
        for a in self.assertions:
            if a.label == label:
                return a
        return None

    @property
    def hard_binding(self) -> Assertion | None:
        for a in self.assertions:
            if a.label in HARD_BINDINGS:
                return a
        return None

    @property
    def dhs_id(self) -> str | None:
        a = self.assertion(MERKLE)
        return a.value["dhs"] if a else None


@dataclass(frozen=True)
class ManifestStore:
    manifests: tuple[Manifest, ...]
    active_index: int = 0

    def __post_init__(self):
        if not self.manifests or not 0 <= self.active_index < len(self.manifests):
            raise InvariantViolation("active manifest index out of range")

    @property
    def active(self) -> Manifest:
        return self.manifests[self.active_index]

    def by_dhs(self, dhs_id: str) -> Manifest | None:
        for m in self.manifests:
            if m.dhs_id == dhs_id:
                return m
        return None


def _check_assertion_store(assertions: Sequence[Assertion]) -> None:
    labels = [a.label for a in assertions]
    hard = [lbl for lbl in labels if lbl in HARD_BINDINGS]
    if len(hard) > 1:
        raise DuplicateHardBinding(f"more than one hard binding: {hard}")
    if len(set(labels)) != len(labels):
        raise InvariantViolation(f"duplicate assertion labels: {labels}")


# ---------------------------------------------------------------------------
# keys


def generate_key() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


def key_from_seed(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


def key_seed(key: Ed25519PrivateKey) -> bytes:
    return key.private_bytes(
        serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
    )


def public_key_bytes(key: Ed25519PrivateKey | Ed25519PublicKey) -> bytes:
    if isinstance(key, Ed25519PrivateKey):
        key = key.public_key()
    return key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def save_key(path: str | Path, key: Ed25519PrivateKey) -> None:
    Path(path).write_text(key_seed(key).hex() + "\n")


def load_key(path: str | Path) -> Ed25519PrivateKey:
    seed = bytes.fromhex(Path(path).read_text().strip())
    if len(seed) != 32:
        raise ValueError(f"{path}: expected a 32-byte hex seed")
    return key_from_seed(seed)


# ---------------------------------------------------------------------------
# trust list


@dataclass(frozen=True)
class TrustEntry:
    public_key: bytes
    authority_domains: tuple[str, ...] = ()
    approved: bool = True


@dataclass
class TrustList:
    entries: dict[str, TrustEntry] = field(default_factory=dict)

    def add(self, distributor_id: str, public_key: bytes, domains: Iterable[str] = (), approved: bool = False) -> None:
        if len(public_key) != 32:
            raise ValueError("Ed25519 public keys are 32 bytes")
        self.entries[distributor_id] = TrustEntry(
            bytes(public_key), tuple(sorted({d.lower().rstrip(".") for d in domains})), approved
        )

    def approve(self, distributor_id: str, approved: bool = True) -> None:
        e = self.entries[distributor_id]
        self.entries[distributor_id] = TrustEntry(e.public_key, e.authority_domains, approved)

    def add_domain(self, distributor_id: str, domain: str) -> None:
        e = self.entries[distributor_id]
        domains = tuple(sorted(set(e.authority_domains) | {domain.lower().rstrip(".")}))
        self.entries[distributor_id] = TrustEntry(e.public_key, domains, e.approved)

    def get(self, distributor_id: str) -> TrustEntry | None:
        return self.entries.get(distributor_id)

    def registered_authority(self, hostname: str) -> str | None:
        host = hostname.lower().rstrip(".")
        for did, e in sorted(self.entries.items()):
            if host in e.authority_domains:
                return did
        return None

    def to_bytes(self) -> bytes:
        return cbor.dumps(
            {
                "version": 1,
                "entries": {
                    did: {"key": e.public_key, "domains": list(e.authority_domains), "approved": e.approved}
                    for did, e in self.entries.items()
                },
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "TrustList":
        m = cbor.loads(data)
        if not isinstance(m, dict) or m.get("version") != 1:
            raise ValueError("unsupported trust list version")
        out = cls()
        for did, e in m["entries"].items():
            out.add(did, e["key"], e["domains"], e["approved"])
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "TrustList":
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# creation


def create_manifest(
    distributor_id: str,
    hard_binding: Assertion,
    extras: Sequence[Assertion],
    signing_key: Ed25519PrivateKey,
    *,
    title: str = "",
    created_at: str | None = None,
    dhs_range: tuple[int, int] | None = None,
    store: ManifestStore | None = None,
    trust: TrustList | None = None,
) -> ManifestStore:
    """Sign a new manifest and return a store in which it is the active one."""
    if hard_binding.label not in HARD_BINDINGS:
        raise InvariantViolation(f"{hard_binding.label!r} is not a hard binding")
    assertions = (hard_binding, *extras)
    _check_assertion_store(assertions)
    if (dhs_range is not None) != (hard_binding.label == MERKLE):
        raise InvariantViolation("a DHS range is required exactly when the hard binding is Merkle")
    if trust is not None:
        entry = trust.get(distributor_id)
        if entry is None or entry.public_key != public_key_bytes(signing_key):
            raise UnknownDistributor(f"{distributor_id!r} is not in the trust list with this key")
    claim = Claim(
        distributor_id,
        title,
        tuple((a.label, a.digest) for a in assertions),
        created_at or utc_now(),
        dhs_range,
    )
    sig = ClaimSignature(SIGNATURE_ALGORITHM, distributor_id, signing_key.sign(claim.to_bytes()))
    manifest = Manifest(assertions, claim, sig)
    previous = store.manifests if store is not None else ()
    return ManifestStore(previous + (manifest,), len(previous))


def merge_stores(stores: Sequence[ManifestStore], active_index: int = 0) -> ManifestStore:
    manifests: list[Manifest] = []
    for s in stores:
        for m in s.manifests:
            if m not in manifests:
                manifests.append(m)
    return ManifestStore(tuple(manifests), active_index)


# ---------------------------------------------------------------------------
# serialization


def _manifest_box(m: Manifest) -> bytes:
    asrts = b"".join(
        encode_box("asrt", encode_box("labl", a.label.encode("utf-8")) + encode_box("cbor", a.body))
        for a in m.assertions
    )
    return encode_box(
        "mani",
        encode_box("asst", asrts) + encode_box("clam", m.claim.to_bytes()) + encode_box("csig", m.signature.to_bytes()),
    )


def serialize_manifest_store(store: ManifestStore) -> bytes:
    header = encode_box("pmsh", struct.pack(">BI", STORE_VERSION, store.active_index))
    return encode_box(MANIFEST_STORE_BOX, header + b"".join(_manifest_box(m) for m in store.manifests))


def _children(data: bytes, start: int, end: int, expected: Sequence[str] | None = None):
    spans = list(iter_boxes(data, start, end))
    if expected is not None and [s.box_type for s in spans] != list(expected):
        raise MalformedStore(f"expected boxes {list(expected)}, found {[s.box_type for s in spans]}")
    return spans


def _body(data: bytes, span) -> bytes:
    return data[span.body_start : span.end]


def _parse_manifest(data: bytes, span) -> Manifest:
    asst, clam, csig = _children(data, span.body_start, span.end, ["asst", "clam", "csig"])
    assertions = []
    for asrt in _children(data, asst.body_start, asst.end):
        if asrt.box_type != "asrt":
            raise MalformedStore(f"unexpected {asrt.box_type!r} in assertion store")
        labl, body = _children(data, asrt.body_start, asrt.end, ["labl", "cbor"])
        try:
            assertions.append(Assertion(_body(data, labl).decode("utf-8"), _body(data, body)))
        except (UnicodeDecodeError, InvariantViolation) as exc:
            raise MalformedStore(f"bad assertion: {exc}") from exc
    try:
        claim = Claim.from_map(cbor.loads_canonical(_body(data, clam)))
        sig = cbor.loads_canonical(_body(data, csig))
    except cbor.NonCanonicalCbor as exc:
        raise MalformedStore(str(exc)) from exc
    if not isinstance(sig, dict) or set(sig) != {"alg", "kid", "sig"}:
        raise MalformedStore("claim signature has unexpected keys")
    try:
        _check_assertion_store(assertions)
    except InvariantViolation as exc:
        raise MalformedStore(str(exc)) from exc
    return Manifest(tuple(assertions), claim, ClaimSignature(sig["alg"], sig["kid"], sig["sig"]))


def parse_manifest_store(data: bytes) -> ManifestStore:
    if not data:
        raise MalformedStore("empty manifest store")
    data = bytes(data)
    try:
        (top,) = _children(data, 0, len(data), [MANIFEST_STORE_BOX])
        spans = _children(data, top.body_start, top.end)
        if not spans or spans[0].box_type != "pmsh" or spans[0].end - spans[0].body_start != 5:
            raise MalformedStore("manifest store must open with a 5-byte pmsh header")
        version, active = struct.unpack_from(">BI", data, spans[0].body_start)
        if version != STORE_VERSION:
            raise UnsupportedVersion(f"manifest store version {version}")
        manifests = []
        for span in spans[1:]:
            if span.box_type != "mani":
                raise MalformedStore(f"unexpected {span.box_type!r} in manifest store")
            manifests.append(_parse_manifest(data, span))
        return ManifestStore(tuple(manifests), active)
    except (MalformedBox, InvariantViolation, ValueError) as exc:
        if isinstance(exc, MalformedStore):
            raise
        raise MalformedStore(str(exc)) from exc


# ---------------------------------------------------------------------------
# verification


class Verdict(str, Enum):
    TRUSTED = "Trusted"
    UNKNOWN_DISTRIBUTOR = "UnknownDistributor"
    BAD_SIGNATURE = "BadSignature"
    MALFORMED_CLAIM = "MalformedClaim"


@dataclass(frozen=True)
class TrustResult:
    verdict: Verdict
    distributor_id: str | None = None
    detail: str = ""

    @property
    def trusted(self) -> bool:
        return self.verdict is Verdict.TRUSTED


def verify_manifest(store: ManifestStore | Manifest, trust: TrustList) -> TrustResult:
    """Check the active manifest: signer listed and approved, signature, then digests."""
    m = store.active if isinstance(store, ManifestStore) else store
    kid = m.signature.signer_key_id
    entry = trust.get(kid)
    if entry is None:
        return TrustResult(Verdict.UNKNOWN_DISTRIBUTOR, None, f"signer {kid!r} not in trust list")
    if not entry.approved:
        return TrustResult(Verdict.UNKNOWN_DISTRIBUTOR, None, f"signer {kid!r} is registered but not approved")
    if m.signature.algorithm != SIGNATURE_ALGORITHM:
        return TrustResult(Verdict.BAD_SIGNATURE, None, f"unsupported algorithm {m.signature.algorithm!r}")
    try:
        Ed25519PublicKey.from_public_bytes(entry.public_key).verify(m.signature.signature, m.claim.to_bytes())
    except (InvalidSignature, ValueError):
        return TrustResult(Verdict.BAD_SIGNATURE, None, "claim signature does not verify")
    if m.claim.distributor_id != kid:
        return TrustResult(Verdict.MALFORMED_CLAIM, None, "claim distributor differs from signer")
    listed = dict(m.claim.assertion_digests)
    if len(listed) != len(m.claim.assertion_digests) or set(listed) != {a.label for a in m.assertions}:
        return TrustResult(Verdict.MALFORMED_CLAIM, None, "claim does not list exactly the stored assertions")
    for a in m.assertions:
        if listed[a.label] != a.digest:
            return TrustResult(Verdict.MALFORMED_CLAIM, None, f"digest mismatch for {a.label}")
    hard = m.hard_binding
    if hard is None or (m.claim.dhs_range is not None) != (hard.label == MERKLE):
        return TrustResult(Verdict.MALFORMED_CLAIM, None, "hard binding missing or inconsistent with DHS range")
    return TrustResult(Verdict.TRUSTED, kid)


# ---------------------------------------------------------------------------
# binding validation


@dataclass(frozen=True)
class ProofRecord:
    """Payload of a fragment's provenance box."""

    dhs_id: str
    leaf_index: int
    leaf_count: int
    siblings: tuple[bytes, ...]

    @property
    def proof(self) -> InclusionProof:
        return InclusionProof(self.leaf_index, self.siblings)

    def to_bytes(self) -> bytes:
        return cbor.dumps({"dhs": self.dhs_id, "idx": self.leaf_index, "n": self.leaf_count, "path": list(self.siblings)})

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProofRecord":
        try:
            m = cbor.loads_canonical(data)
            return cls(m["dhs"], int(m["idx"]), int(m["n"]), tuple(bytes(s) for s in m["path"]))
        except (cbor.NonCanonicalCbor, KeyError, TypeError, ValueError) as exc:
            raise MissingProof(f"unreadable proof record: {exc}") from exc


@dataclass(frozen=True)
class BindingVerdict:
    match: bool
    detail: str = ""
    fragments_checked: int = 0

    def __bool__(self) -> bool:
        return self.match


def _mismatch(detail: str, checked: int = 0) -> BindingVerdict:
    return BindingVerdict(False, detail, checked)


def merkle_rows(manifest: Manifest) -> dict[int, dict]:
    a = manifest.assertion(MERKLE)
    if a is None:
        raise MissingAssertion("manifest has no Merkle binding")
    return {row["track"]: row for row in a.value["rows"]}


def validate_binding(
    manifest: Manifest, media: MediaObject, fragment_range: tuple[int, int] | None = None
) -> BindingVerdict:
    """Check ``media`` against the manifest's hard binding.

    For Merkle bindings ``fragment_range`` limits the check to per-track
    fragment indices ``lo..hi`` inclusive; every checked fragment must carry a
    proof for this manifest's DHS.
    """
    hard = manifest.hard_binding
    if hard is None:
        raise MissingAssertion("manifest has no hard binding")
    if hard.label == MONOLITHIC:
        return _validate_monolithic(hard.value, media)
    return _validate_merkle(manifest, media, fragment_range)


def _validate_monolithic(value: dict, media: MediaObject) -> BindingVerdict:
    if media.kind is not Kind.MONOLITHIC:
        return _mismatch("monolithic binding applied to a fragmented object")
    data = serialize_media(media)
    exclusions = manifest_exclusions(data)
    if [e.offset for e in exclusions] != [e["start"] for e in value["exclusions"]]:
        return _mismatch("exclusion ranges do not line up with the manifest store box")
    if skip_hash(data, exclusions) != value["hash"]:
        return _mismatch("monolithic digest differs")
    return BindingVerdict(True, "monolithic digest matches", 1)


def _validate_merkle(manifest: Manifest, media: MediaObject, fragment_range) -> BindingVerdict:
    rows = merkle_rows(manifest)
    dhs_id = manifest.dhs_id
    if sorted(rows) != sorted(media.track_ids):
        return _mismatch(f"tracks {media.track_ids} do not match Merkle rows {sorted(rows)}")
    checked = 0
    for tid in media.track_ids:
        row = rows[tid]
        if hash_init_segment(media.init_for(tid)) != row["init"]:
            return _mismatch(f"init segment hash differs on track {tid}", checked)
        frags = media.fragments_for(tid)
        if fragment_range is not None:
            lo, hi = fragment_range
            frags = frags[lo : hi + 1]
        prev_index = None
        for frag in frags:
            if frag.provenance is None:
                raise MissingProof(f"track {tid} fragment {frag.sequence_number} has no provenance box")
            rec = ProofRecord.from_bytes(frag.provenance)
            if rec.dhs_id != dhs_id:
                return _mismatch(f"fragment {frag.sequence_number} belongs to DHS {rec.dhs_id}", checked)
            if rec.leaf_count != row["count"]:
                return _mismatch(f"fragment {frag.sequence_number} proof is for a different tree size", checked)
            if prev_index is not None and rec.leaf_index != prev_index + 1:
                return _mismatch(f"fragment {frag.sequence_number} is out of leaf order", checked)
            prev_index = rec.leaf_index
            if not verify_inclusion(row["root"], hash_fragment(frag), rec.proof, row["count"]):
                return _mismatch(f"track {tid} fragment {frag.sequence_number} fails inclusion", checked)
            checked += 1
    return BindingVerdict(True, f"{checked} fragments verified", checked)


def validate_store_binding(store: ManifestStore, media: MediaObject) -> BindingVerdict:
    """Validate every fragment against the manifest of the DHS its proof names.

    Used for objects whose fragments span several DHS (canonical clips).
    Monolithic objects and single-manifest stores defer to the active manifest.
    """
    if media.kind is Kind.MONOLITHIC or store.active.hard_binding.label == MONOLITHIC:
        return validate_binding(store.active, media)
    groups: dict[str, list] = {}
    for frag in media.fragments:
        if frag.provenance is None:
            raise MissingProof(f"track {frag.track_id} fragment {frag.sequence_number} has no provenance box")
        groups.setdefault(ProofRecord.from_bytes(frag.provenance).dhs_id, []).append(frag)
    checked = 0
    for dhs_id, frags in groups.items():
        m = store.by_dhs(dhs_id)
        if m is None:
            return _mismatch(f"no manifest in store for DHS {dhs_id}", checked)
        sub = MediaObject(media.kind, media.init_segments, tuple(frags))
        v = validate_binding(m, sub)
        if not v:
            return _mismatch(v.detail, checked + v.fragments_checked)
        checked += v.fragments_checked
    return BindingVerdict(True, f"{checked} fragments verified across {len(groups)} DHS", checked)


def get_asset_reference(manifest: Manifest) -> AssetReference:
    a = manifest.assertion(ASSET_REFERENCE)
    if a is None:
        raise MissingAssertion("manifest has no asset.reference assertion")
    v = a.value
    return AssetReference(v["uri"], v.get("start"), v.get("end"))

"""Recovery protocol: URLs, the DHS registry, descriptors and the multipart/related wire format."""

from __future__ import annotations

import base64
import hashlib
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from email.message import Message
from pathlib import Path
from types import MappingProxyType
from typing import Mapping
from urllib.parse import urlsplit

from .. import cbor
from ..errors import (
    DanglingPartRef,
    MalformedMultipart,
    MissingRootPart,
    NotFound,
    OverlappingRange,
)
from ..manifest import MEDIA_TYPE as MANIFEST_MEDIA_TYPE
from ..manifest import ManifestStore, parse_manifest_store
from ..watermark import PARAMS, SERVER_CODE_MAX, Vp1Payload

DESCRIPTOR_MEDIA_TYPE = "application/x-recovery-descriptor"
ASSET_MEDIA_TYPE = "application/x-pmf4"
RECOVERY_PATH = "/a336/recovery/"
ASSET_PATH = "/assets/"
ROOT_PART_ID = "descriptor"


# ---------------------------------------------------------------------------
# URLs


def server_authority(server_code: int, base_domain: str) -> str:
    label = base64.b32encode(server_code.to_bytes(4, "big")).decode("ascii").rstrip("=").lower()
    return f"wm-{label}.{base_domain.lower().rstrip('.')}"


def parse_authority(host: str, base_domain: str) -> int | None:
    """Server code encoded in ``host``, or None when it is not one of ours."""
    host = host.split(":", 1)[0].lower().rstrip(".")
    suffix = "." + base_domain.lower().rstrip(".")
    if not host.startswith("wm-") or not host.endswith(suffix):
        return None
    label = host[3 : -len(suffix)].upper()
    if len(label) != 7:
        return None
    try:
        raw = base64.b32decode(label + "=")
    except (ValueError, base64.binascii.Error):
        return None
    code = int.from_bytes(raw, "big")
    return code if code <= SERVER_CODE_MAX else None


def build_recovery_url(payload: Vp1Payload, base_domain: str, end_interval_code: int | None = None) -> str:
    if not base_domain:
        raise ValueError("base domain must be non-empty")
    url = f"https://{server_authority(payload.server_code, base_domain)}{RECOVERY_PATH}{payload.interval_code}"
    if end_interval_code is not None:
        url += f"?einx={end_interval_code}"
    return url


def asset_uri(server_code: int, base_domain: str, dhs_id: str) -> str:
    return f"https://{server_authority(server_code, base_domain)}{ASSET_PATH}{dhs_id}"


def asset_id_from_uri(uri: str) -> str | None:
    path = urlsplit(uri).path
    if not path.startswith(ASSET_PATH):
        return None
    return path[len(ASSET_PATH) :] or None


# ---------------------------------------------------------------------------
# requests and descriptors


@dataclass(frozen=True)
class RecoveryRequest:
    server_code: int
    interval_code: int
    end_interval_code: int | None = None

    def __post_init__(self):
        if self.end_interval_code is not None and self.end_interval_code < self.interval_code:
            raise ValueError("EINX precedes BINX")

    @property
    def last(self) -> int:
        return self.interval_code if self.end_interval_code is None else self.end_interval_code


@dataclass(frozen=True)
class DescriptorEntry:
    dhs_id: str
    first_interval_code: int
    last_interval_code: int
    manifest_part_ref: str
    valid_until: str

    def covers(self, code: int) -> bool:
        return self.first_interval_code <= code <= self.last_interval_code


@dataclass(frozen=True)
class RecoveryDescriptor:
    server_code: int
    anchor_interval_code: int
    anchor_media_time: float
    entries: tuple[DescriptorEntry, ...]
    gaps: tuple[tuple[int, int], ...] = ()
    cell_duration_seconds: float = PARAMS.cell_seconds

    def __post_init__(self):
        for a, b in zip(self.entries, self.entries[1:]):
            if b.first_interval_code <= a.last_interval_code:
                raise ValueError("descriptor entries overlap or are unsorted")

    def media_time(self, interval_code: int) -> float:
        return self.anchor_media_time + (interval_code - self.anchor_interval_code) * self.cell_duration_seconds

    def to_bytes(self) -> bytes:
        return cbor.dumps(
            {
                "version": 1,
                "server": self.server_code,
                "anchor": {"code": self.anchor_interval_code, "time": float(self.anchor_media_time)},
                "cell": float(self.cell_duration_seconds),
                "entries": [
                    {
                        "dhs": e.dhs_id,
                        "first": e.first_interval_code,
                        "last": e.last_interval_code,
                        "part": e.manifest_part_ref,
                        "valid_until": e.valid_until,
                    }
                    for e in self.entries
                ],
                "gaps": [list(g) for g in self.gaps],
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "RecoveryDescriptor":
        try:
            m = cbor.loads_canonical(data)
            if m["version"] != 1:
                raise MalformedMultipart(f"unsupported descriptor version {m['version']}")
            return cls(
                m["server"],
                m["anchor"]["code"],
                m["anchor"]["time"],
                tuple(
                    DescriptorEntry(e["dhs"], e["first"], e["last"], e["part"], e["valid_until"]) for e in m["entries"]
                ),
                tuple((a, b) for a, b in m["gaps"]),
                m["cell"],
            )
        except (cbor.NonCanonicalCbor, KeyError, TypeError, ValueError) as exc:
            raise MalformedMultipart(f"bad recovery descriptor: {exc}") from exc


@dataclass(frozen=True)
class RecoveryResponse:
    descriptor: RecoveryDescriptor
    parts: Mapping[str, tuple[str, bytes]] = field(repr=False)

    @property
    def has_gap(self) -> bool:
        return bool(self.descriptor.gaps)

    def manifest_bytes(self, entry: DescriptorEntry) -> bytes:
        return self.parts[entry.manifest_part_ref][1]

    def manifest_store(self, entry: DescriptorEntry) -> ManifestStore:
        return parse_manifest_store(self.manifest_bytes(entry))

    def entries_for(self, first: int, last: int) -> list[DescriptorEntry]:
        return [e for e in self.descriptor.entries if e.last_interval_code >= first and e.first_interval_code <= last]


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class DhsRecord:
    server_code: int
    dhs_id: str
    first_interval_code: int
    last_interval_code: int
    media_start: float
    manifest_store: bytes = field(repr=False)
    replica_locator: str = ""
    valid_until: str = ""

    def to_bytes(self) -> bytes:
        return cbor.dumps(
            {
                "server": self.server_code,
                "dhs": self.dhs_id,
                "first": self.first_interval_code,
                "last": self.last_interval_code,
                "media_start": float(self.media_start),
                "manifest": self.manifest_store,
                "replica": self.replica_locator,
                "valid_until": self.valid_until,
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "DhsRecord":
        m = cbor.loads(data)
        return cls(
            m["server"], m["dhs"], m["first"], m["last"], m["media_start"], m["manifest"], m["replica"], m["valid_until"]
        )


def default_valid_until(days: int = 1) -> str:
    return (datetime.now(timezone.utc) + timedelta(days=days)).strftime("%Y-%m-%dT%H:%M:%SZ")


class DhsRegistry:
    """DHS records and replica files, optionally mirrored to a directory.

    Layout under ``root``: ``dhs/{serverCode}/{dhsId}.cbor`` and
    ``assets/{dhsId}.pmf4``.  Writers are serialized by a lock; readers take
    an immutable snapshot.
    """

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self._lock = threading.Lock()
        self._records: Mapping[tuple[int, str], DhsRecord] = MappingProxyType({})
        self._assets: dict[str, bytes] = {}
        if self.root is not None:
            self._load()

    def _load(self) -> None:
        records = {}
        for path in sorted((self.root / "dhs").glob("*/*.cbor")):
            rec = DhsRecord.from_bytes(path.read_bytes())
            records[(rec.server_code, rec.dhs_id)] = rec
        self._records = MappingProxyType(records)

    def snapshot(self) -> Mapping[tuple[int, str], DhsRecord]:
        return self._records

    def records_for(self, server_code: int) -> list[DhsRecord]:
        recs = [r for (sc, _), r in self._records.items() if sc == server_code]
        return sorted(recs, key=lambda r: r.first_interval_code)

    def publish(self, record: DhsRecord, replica: bytes | None = None) -> "DhsRegistry":
        with self._lock:
            records = dict(self._records)
            for key, existing in list(records.items()):
                if existing.server_code != record.server_code:
                    continue
                same_range = (existing.first_interval_code, existing.last_interval_code) == (
                    record.first_interval_code,
                    record.last_interval_code,
                )
                if same_range:
                    del records[key]
                elif (
                    existing.first_interval_code <= record.last_interval_code
                    and record.first_interval_code <= existing.last_interval_code
                ):
                    raise OverlappingRange(
                        f"[{record.first_interval_code}, {record.last_interval_code}] overlaps {existing.dhs_id}"
                    )
            if not record.replica_locator:
                record = replace(record, replica_locator=f"assets/{record.dhs_id}.pmf4")
            records[(record.server_code, record.dhs_id)] = record
            if replica is not None:
                self._assets[record.dhs_id] = bytes(replica)
            if self.root is not None:
                self._persist(record, replica)
            self._records = MappingProxyType(records)
        return self

    def _persist(self, record: DhsRecord, replica: bytes | None) -> None:
        dhs_dir = self.root / "dhs" / str(record.server_code)
        dhs_dir.mkdir(parents=True, exist_ok=True)
        for path in dhs_dir.glob("*.cbor"):
            other = DhsRecord.from_bytes(path.read_bytes())
            if other.dhs_id != record.dhs_id and (other.first_interval_code, other.last_interval_code) == (
                record.first_interval_code,
                record.last_interval_code,
            ):
                path.unlink()
        (dhs_dir / f"{record.dhs_id}.cbor").write_bytes(record.to_bytes())
        if replica is not None:
            asset = self.root / record.replica_locator
            asset.parent.mkdir(parents=True, exist_ok=True)
            asset.write_bytes(replica)

    def asset(self, dhs_id: str) -> bytes:
        if dhs_id in self._assets:
            return self._assets[dhs_id]
        for rec in self._records.values():
            if rec.dhs_id == dhs_id and self.root is not None:
                path = self.root / rec.replica_locator
                if path.is_file():
                    return path.read_bytes()
        raise NotFound(f"no replica for {dhs_id}")

    def replace_asset(self, dhs_id: str, data: bytes) -> None:
        """Overwrite a stored replica; used to model server-side tampering."""
        with self._lock:
            self._assets[dhs_id] = bytes(data)
            if self.root is not None:
                for rec in self._records.values():
                    if rec.dhs_id == dhs_id:
                        (self.root / rec.replica_locator).write_bytes(data)


def publish_dhs(registry: DhsRegistry, server_code: int, record: DhsRecord, replica: bytes | None = None) -> DhsRegistry:
    if record.server_code != server_code:
        record = replace(record, server_code=server_code)
    return registry.publish(record, replica)


# ---------------------------------------------------------------------------
# serving


def _part_ref(dhs_id: str) -> str:
    return f"manifest-{dhs_id}"


def serve_recovery(request: RecoveryRequest, registry: DhsRegistry | Mapping) -> RecoveryResponse:
    """Answer from a registry snapshot; raises NotFound when nothing covers BINX."""
    snapshot = registry.snapshot() if isinstance(registry, DhsRegistry) else registry
    records = sorted(
        (r for (sc, _), r in snapshot.items() if sc == request.server_code), key=lambda r: r.first_interval_code
    )
    binx, einx = request.interval_code, request.last
    if not any(r.first_interval_code <= binx <= r.last_interval_code for r in records):
        raise NotFound(f"no DHS covers interval code {binx} for server {request.server_code}")
    covering = [r for r in records if r.last_interval_code >= binx and r.first_interval_code <= einx]
    gaps = []
    cursor = binx
    for r in covering:
        if r.first_interval_code > cursor:
            gaps.append((cursor, r.first_interval_code - 1))
        cursor = max(cursor, r.last_interval_code + 1)
    if cursor <= einx:
        gaps.append((cursor, einx))
    anchor = records[0]
    entries = tuple(
        DescriptorEntry(r.dhs_id, r.first_interval_code, r.last_interval_code, _part_ref(r.dhs_id), r.valid_until)
        for r in covering
    )
    descriptor = RecoveryDescriptor(
        request.server_code, anchor.first_interval_code, anchor.media_start, entries, tuple(gaps)
    )
    parts = {_part_ref(r.dhs_id): (MANIFEST_MEDIA_TYPE, r.manifest_store) for r in covering}
    return RecoveryResponse(descriptor, MappingProxyType(parts))


# ---------------------------------------------------------------------------
# multipart/related


def encode_multipart(
    response: RecoveryResponse, extra_parts: Mapping[str, tuple[str, bytes]] | None = None
) -> tuple[bytes, str]:
    """Serialize to a multipart/related body; returns ``(body, content_type_header)``.

    The boundary is derived from the content, so identical responses are
    byte-identical on the wire.
    """
    parts = [(ROOT_PART_ID, DESCRIPTOR_MEDIA_TYPE, response.descriptor.to_bytes())]
    parts += [(ref, mt, data) for ref, (mt, data) in response.parts.items()]
    if extra_parts:
        parts += [(ref, mt, data) for ref, (mt, data) in extra_parts.items()]
    digest = hashlib.sha256()
    for ref, mt, data in parts:
        digest.update(ref.encode() + b"\0" + mt.encode() + b"\0" + data)
    seed = digest.hexdigest()
    boundary = f"prov-{seed[:24]}"
    n = 0
    while any(boundary.encode() in data for _, _, data in parts):
        n += 1
        boundary = f"prov-{seed[:24]}-{n}"
    out = []
    for ref, mt, data in parts:
        out.append(
            f"--{boundary}\r\nContent-Type: {mt}\r\nContent-ID: <{ref}>\r\n"
            f"Content-Length: {len(data)}\r\n\r\n".encode("ascii")
        )
        out.append(data)
        out.append(b"\r\n")
    out.append(f"--{boundary}--\r\n".encode("ascii"))
    header = f'multipart/related; boundary="{boundary}"; type="{DESCRIPTOR_MEDIA_TYPE}"; start="<{ROOT_PART_ID}>"'
    return b"".join(out), header


def _split_parts(body: bytes, boundary: str) -> list[tuple[dict[str, str], bytes]]:
    delim = b"--" + boundary.encode("ascii")
    if body.startswith(delim):
        pos = 0
    else:
        pos = body.find(b"\r\n" + delim)
        if pos < 0:
            raise MalformedMultipart("opening boundary not found")
        pos += 2
    parts = []
    while True:
        pos += len(delim)
        if body[pos : pos + 2] == b"--":
            return parts
        if body[pos : pos + 2] != b"\r\n":
            raise MalformedMultipart("boundary line not terminated by CRLF")
        pos += 2
        head_end = body.find(b"\r\n\r\n", pos)
        if head_end < 0:
            raise MalformedMultipart("part headers not terminated")
        headers = {}
        for line in body[pos:head_end].decode("latin-1").split("\r\n"):
            if not line:
                continue
            name, sep, value = line.partition(":")
            if not sep:
                raise MalformedMultipart(f"bad header line {line!r}")
            headers[name.strip().lower()] = value.strip()
        nxt = body.find(b"\r\n" + delim, head_end + 4)
        if nxt < 0:
            raise MalformedMultipart("closing boundary not found")
        parts.append((headers, body[head_end + 4 : nxt]))
        pos = nxt + 2


def _strip_cid(value: str) -> str:
    value = value.strip()
    return value[1:-1] if value.startswith("<") and value.endswith(">") else value


def parse_recovery_response(body: bytes, content_type: str) -> RecoveryResponse:
    msg = Message()
    msg["Content-Type"] = content_type
    if msg.get_content_type() != "multipart/related":
        raise MalformedMultipart(f"expected multipart/related, got {msg.get_content_type()}")
    boundary = msg.get_param("boundary")
    if not boundary or not isinstance(boundary, str):
        raise MalformedMultipart("content type carries no boundary")
    start = msg.get_param("start")
    parts = _split_parts(bytes(body), boundary)
    by_id: dict[str, tuple[str, bytes]] = {}
    order = []
    for headers, data in parts:
        cid = _strip_cid(headers.get("content-id", ""))
        mt = headers.get("content-type", "application/octet-stream").split(";")[0].strip().lower()
        by_id[cid] = (mt, data)
        order.append(cid)
    if not order:
        raise MissingRootPart("multipart body has no parts")
    root_id = _strip_cid(start) if isinstance(start, str) else order[0]
    if root_id not in by_id or by_id[root_id][0] != DESCRIPTOR_MEDIA_TYPE:
        raise MissingRootPart("root part is missing or is not a recovery descriptor")
    descriptor = RecoveryDescriptor.from_bytes(by_id[root_id][1])
    resolved = {}
    for e in descriptor.entries:
        part = by_id.get(e.manifest_part_ref)
        if part is None or part[0] != MANIFEST_MEDIA_TYPE:
            raise DanglingPartRef(f"entry {e.dhs_id} references missing part {e.manifest_part_ref!r}")
        resolved[e.manifest_part_ref] = part
    return RecoveryResponse(descriptor, MappingProxyType(resolved))


def merge_responses(responses: list[RecoveryResponse]) -> RecoveryResponse:
    """Combine per-entry responses from a walk into one descriptor."""
    entries: dict[str, DescriptorEntry] = {}
    parts: dict[str, tuple[str, bytes]] = {}
    for r in responses:
        for e in r.descriptor.entries:
            entries[e.dhs_id] = e
            parts[e.manifest_part_ref] = r.parts[e.manifest_part_ref]
    ordered = tuple(sorted(entries.values(), key=lambda e: e.first_interval_code))
    first = responses[0].descriptor
    gaps = []
    for a, b in zip(ordered, ordered[1:]):
        if b.first_interval_code > a.last_interval_code + 1:
            gaps.append((a.last_interval_code + 1, b.first_interval_code - 1))
    return RecoveryResponse(
        RecoveryDescriptor(first.server_code, first.anchor_interval_code, first.anchor_media_time, ordered, tuple(gaps)),
        MappingProxyType(parts),
    )

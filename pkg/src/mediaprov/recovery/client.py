"""Recovery clients.

Both clients expose ``recover(payload, end_interval_code)`` and
``fetch(uri)``.  :class:`HttpRecoveryClient` talks to a real server;
hostnames can be pinned to addresses with a resolver map so tests need no
DNS.  :class:`LocalRecoveryClient` answers from an in-process registry but
still round-trips every response through the multipart wire format.
"""

from __future__ import annotations

import http.client
from typing import Mapping
from urllib.parse import urlsplit

from ..errors import MalformedMultipart, NotFound, RecoveryFailed
from ..watermark import Vp1Payload
from .protocol import (
    DhsRegistry,
    RecoveryRequest,
    RecoveryResponse,
    asset_id_from_uri,
    build_recovery_url,
    encode_multipart,
    merge_responses,
    parse_authority,
    parse_recovery_response,
    serve_recovery,
)


class RecoveryClient:
    base_domain: str

    def get(self, url: str) -> tuple[bytes, str]:
        raise NotImplementedError

    def recovery_url(self, payload: Vp1Payload, end_interval_code: int | None = None) -> str:
        return build_recovery_url(payload, self.base_domain, end_interval_code)

    def recover(self, payload: Vp1Payload, end_interval_code: int | None = None) -> RecoveryResponse:
        """Fetch the descriptor and manifests covering BINX..EINX.

        If the server ignores ``einx`` the client walks forward, one request
        per missing entry, until EINX is covered or nothing more is found.
        """
        body, ctype = self.get(self.recovery_url(payload, end_interval_code))
        try:
            first = parse_recovery_response(body, ctype)
        except MalformedMultipart as exc:
            raise RecoveryFailed(f"unusable recovery response: {exc}") from exc
        if end_interval_code is None:
            return first
        responses = [first]
        reached = max(e.last_interval_code for e in first.descriptor.entries)
        while reached < end_interval_code:
            nxt = Vp1Payload(payload.server_code, reached + 1)
            try:
                body, ctype = self.get(self.recovery_url(nxt, end_interval_code))
                r = parse_recovery_response(body, ctype)
            except (RecoveryFailed, MalformedMultipart):
                break
            if not r.descriptor.entries or max(e.last_interval_code for e in r.descriptor.entries) <= reached:
                break
            responses.append(r)
            reached = max(e.last_interval_code for e in r.descriptor.entries)
        return first if len(responses) == 1 else merge_responses(responses)

    def fetch(self, uri: str) -> bytes:
        return self.get(uri)[0]


class HttpRecoveryClient(RecoveryClient):
    def __init__(self, base_domain: str, resolver: Mapping[str, str] | None = None, timeout: float = 10.0):
        self.base_domain = base_domain
        self.resolver = {k.lower(): v for k, v in (resolver or {}).items()}
        self.timeout = timeout

    def _connection(self, host: str):
        addr = self.resolver.get(host.lower()) or self.resolver.get("*")
        if addr is not None:
            # pinned hosts are test or lab endpoints served over plain HTTP
            return http.client.HTTPConnection(addr, timeout=self.timeout)
        return http.client.HTTPSConnection(host, timeout=self.timeout)

    def get(self, url: str) -> tuple[bytes, str]:
        parts = urlsplit(url)
        path = parts.path + (f"?{parts.query}" if parts.query else "")
        conn = self._connection(parts.hostname or "")
        try:
            conn.request("GET", path, headers={"Host": parts.netloc})
            resp = conn.getresponse()
            body = resp.read()
        except OSError as exc:
            raise RecoveryFailed(f"GET {url}: {exc}") from exc
        finally:
            conn.close()
        if resp.status != 200:
            raise RecoveryFailed(f"GET {url}: HTTP {resp.status}")
        return body, resp.getheader("Content-Type", "")


class LocalRecoveryClient(RecoveryClient):
    def __init__(self, registry: DhsRegistry, base_domain: str, extra_parts=None):
        self.registry = registry
        self.base_domain = base_domain
        self.extra_parts = extra_parts

    def get(self, url: str) -> tuple[bytes, str]:
        parts = urlsplit(url)
        server_code = parse_authority(parts.hostname or "", self.base_domain)
        if server_code is None:
            raise RecoveryFailed(f"{parts.hostname} is not a recovery authority")
        try:
            if parts.path.startswith("/a336/recovery/"):
                binx = int(parts.path.rsplit("/", 1)[1])
                einx = None
                if parts.query.startswith("einx="):
                    einx = int(parts.query[5:])
                response = serve_recovery(RecoveryRequest(server_code, binx, einx), self.registry)
                return encode_multipart(response, self.extra_parts)
            dhs_id = asset_id_from_uri(url)
            if dhs_id is None:
                raise NotFound(url)
            return self.registry.asset(dhs_id), "application/x-pmf4"
        except NotFound as exc:
            raise RecoveryFailed(f"GET {url}: not found ({exc})") from exc

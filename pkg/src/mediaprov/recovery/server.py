"""HTTP front end for the recovery protocol.

``GET /a336/recovery/{binx}[?einx=N]`` answers with multipart/related or 404;
``GET /assets/{dhsId}`` returns the stored fMP4 replica.  The server code is
read from the Host header, so one process can answer for many server codes
under the same base domain.
"""

from __future__ import annotations

import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from ..errors import NotFound
from .protocol import (
    ASSET_MEDIA_TYPE,
    ASSET_PATH,
    RECOVERY_PATH,
    DhsRegistry,
    RecoveryRequest,
    encode_multipart,
    parse_authority,
    serve_recovery,
)

log = logging.getLogger(__name__)


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # route through logging instead of stderr
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes, content_type: str = "text/plain; charset=utf-8") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        url = urlsplit(self.path)
        try:
            if url.path.startswith(RECOVERY_PATH):
                self._recovery(url)
            elif url.path.startswith(ASSET_PATH):
                self._asset(url.path[len(ASSET_PATH) :])
            else:
                self._send(404, b"not found\n")
        except NotFound as exc:
            self._send(404, f"{exc}\n".encode())
        except ValueError as exc:
            self._send(400, f"{exc}\n".encode())

    def _recovery(self, url):
        server_code = parse_authority(self.headers.get("Host", ""), self.server.base_domain)
        if server_code is None:
            raise NotFound("host is not a recovery authority under this base domain")
        binx = int(url.path[len(RECOVERY_PATH) :])
        query = parse_qs(url.query)
        einx = int(query["einx"][0]) if "einx" in query else None
        response = serve_recovery(RecoveryRequest(server_code, binx, einx), self.server.registry)
        body, content_type = encode_multipart(response, self.server.extra_parts)
        self._send(200, body, content_type)

    def _asset(self, dhs_id: str):
        self._send(200, self.server.registry.asset(dhs_id), ASSET_MEDIA_TYPE)


class _Server(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, registry: DhsRegistry, base_domain: str, extra_parts=None):
        super().__init__(address, _Handler)
        self.registry = registry
        self.base_domain = base_domain
        self.extra_parts = extra_parts


class RecoveryServer:
    """Threaded recovery server; use as a context manager in tests.

    ``extra_parts`` are appended to every multipart response, which lets tests
    check that clients ignore parts they do not understand.
    """

    def __init__(self, registry: DhsRegistry, base_domain: str, host: str = "127.0.0.1", port: int = 0, extra_parts=None):
        self._httpd = _Server((host, port), registry, base_domain, extra_parts)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "RecoveryServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="recovery-server", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "RecoveryServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

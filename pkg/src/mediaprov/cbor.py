"""Deterministic CBOR helpers.

Every structure that gets hashed or signed goes through :func:`dumps`, which
uses the core deterministic encoding (shortest-form integers, sorted map keys,
definite lengths).  :func:`loads_canonical` rejects input that would not
re-encode to the same bytes, so digests over decoded data are stable.
"""

from __future__ import annotations

from typing import Any

import cbor2


class NonCanonicalCbor(ValueError):
    pass


def dumps(obj: Any) -> bytes:
    return cbor2.dumps(obj, canonical=True)


def loads(data: bytes) -> Any:
    try:
        return cbor2.loads(data)
    except (cbor2.CBORDecodeError, ValueError, TypeError, EOFError) as exc:
        raise NonCanonicalCbor(f"undecodable CBOR: {exc}") from exc


def loads_canonical(data: bytes) -> Any:
    obj = loads(data)
    if dumps(obj) != bytes(data):
        raise NonCanonicalCbor("CBOR item is not in deterministic encoding")
    return obj

"""Broadcast media provenance: fMP4 replicas, signed DHS manifests, watermark
recovery, validation and canonical clips."""

from .bmff import MediaObject, parse_media, serialize_media
from .manifest import TrustList, create_manifest, parse_manifest_store, serialize_manifest_store, verify_manifest
from .pipeline import BroadcastConfig, produce_canonical_clip, produce_replica, simulate_capture
from .validator import PlatformPolicy, Terminal, ValidationOutcome, validate_media_object
from .watermark import Vp1Payload, extract_segments

__version__ = "0.1.0"

__all__ = [
    "BroadcastConfig",
    "MediaObject",
    "PlatformPolicy",
    "Terminal",
    "TrustList",
    "ValidationOutcome",
    "Vp1Payload",
    "create_manifest",
    "extract_segments",
    "parse_manifest_store",
    "parse_media",
    "produce_canonical_clip",
    "produce_replica",
    "serialize_manifest_store",
    "serialize_media",
    "simulate_capture",
    "validate_media_object",
    "verify_manifest",
]

from .client import HttpRecoveryClient, LocalRecoveryClient, RecoveryClient
from .protocol import (
    ASSET_MEDIA_TYPE,
    DESCRIPTOR_MEDIA_TYPE,
    DescriptorEntry,
    DhsRecord,
    DhsRegistry,
    RecoveryDescriptor,
    RecoveryRequest,
    RecoveryResponse,
    asset_uri,
    build_recovery_url,
    encode_multipart,
    parse_authority,
    parse_recovery_response,
    publish_dhs,
    serve_recovery,
    server_authority,
)
from .server import RecoveryServer

__all__ = [
    "ASSET_MEDIA_TYPE",
    "DESCRIPTOR_MEDIA_TYPE",
    "DescriptorEntry",
    "DhsRecord",
    "DhsRegistry",
    "HttpRecoveryClient",
    "LocalRecoveryClient",
    "RecoveryClient",
    "RecoveryDescriptor",
    "RecoveryRequest",
    "RecoveryResponse",
    "RecoveryServer",
    "asset_uri",
    "build_recovery_url",
    "encode_multipart",
    "parse_authority",
    "parse_recovery_response",
    "publish_dhs",
    "serve_recovery",
    "server_authority",
]

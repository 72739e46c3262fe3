"""Command-line entry point.

Exit codes: 0 success, 2 validation ended in an Exception outcome (or a
canonical walk failed validation), 1 operational error, 64 usage error.

Global settings come from flags, then ``MEDIAPROV_CONFIG`` or ``--config``.
The config file holds one ``key = value`` per line; ``#`` starts a comment.
Keys: ``registry``, ``trust``, ``base_domain``, ``format``, and ``resolve``
(comma-separated ``host=addr:port`` pairs, ``*`` matching any host).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import cbor
from .bmff import parse_media, serialize_media
from .errors import MediaProvError
from .manifest import TrustList, generate_key, key_from_seed, load_key, public_key_bytes, save_key
from .pipeline import (
    BroadcastConfig,
    SourceEssence,
    perturb_essence,
    produce_canonical_clip,
    produce_replica,
    publish_stream,
    simulate_capture,
    synthetic_source,
)
from .recovery import DhsRegistry, HttpRecoveryClient, LocalRecoveryClient, RecoveryServer, server_authority
from .validator import Action, CanonicalDecision, PlatformPolicy, validate_media_object
from .watermark import Vp1Payload, erase_watermark, extract_segments, pcm_from_bytes, pcm_to_bytes

log = logging.getLogger("mediaprov")

EXIT_OK, EXIT_ERROR, EXIT_EXCEPTION, EXIT_USAGE = 0, 1, 2, 64
CONFIG_KEYS = {"registry", "trust", "base_domain", "format", "resolve"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class CliConfig:
    registry_dir: Path | None = None
    trust_list_path: Path | None = None
    base_domain: str = "wm.test"
    resolver: dict[str, str] = field(default_factory=dict)
    output_format: str = "json"


def read_config_file(path: str | Path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{n}: expected one of {sorted(CONFIG_KEYS)} as key = value")
        out[key] = value.strip().strip('"')
    return out


def _parse_resolve(items) -> dict[str, str]:
    out = {}
    for item in items:
        for pair in filter(None, (p.strip() for p in item.split(","))):
            host, sep, addr = pair.partition("=")
            if not sep:
                raise UsageError(f"--resolve expects host=addr:port, got {pair!r}")
            out[host] = addr
    return out


def build_config(args) -> CliConfig:
    path = args.config or os.environ.get("MEDIAPROV_CONFIG")
    file = read_config_file(path) if path else {}
    registry = args.registry or file.get("registry")
    trust = args.trust or file.get("trust")
    resolver = _parse_resolve([file["resolve"]] if "resolve" in file else [])
    resolver.update(_parse_resolve(args.resolve or []))
    fmt = args.format or file.get("format", "json")
    if fmt not in ("json", "cbor"):
        raise UsageError(f"unknown output format {fmt!r}")
    return CliConfig(
        Path(registry) if registry else None,
        Path(trust) if trust else None,
        args.base_domain or file.get("base_domain", "wm.test"),
        resolver,
        fmt,
    )


def _jsonable(x: Any) -> Any:
    if isinstance(x, bytes):
        return x.hex()
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def emit(cfg: CliConfig, obj: Any, out=None) -> None:
    out = out or sys.stdout
    if cfg.output_format == "cbor":
        sys.stdout.buffer.write(cbor.dumps(obj))
        sys.stdout.buffer.flush()
    else:
        out.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
        out.flush()


def _need(value, what: str):
    if value is None:
        raise UsageError(f"{what} is required (flag or config file)")
    return value


def _registry(cfg: CliConfig) -> DhsRegistry:
    root = _need(cfg.registry_dir, "--registry")
    return DhsRegistry(root)


def _trust(cfg: CliConfig, must_exist: bool = True) -> TrustList:
    path = _need(cfg.trust_list_path, "--trust")
    if not path.exists():
        if must_exist:
            raise FileNotFoundError(f"trust list {path} does not exist")
        return TrustList()
    return TrustList.load(path)


def _client(cfg: CliConfig, args):
    if getattr(args, "local", False):
        return LocalRecoveryClient(_registry(cfg), cfg.base_domain)
    return HttpRecoveryClient(cfg.base_domain, cfg.resolver)


# ---------------------------------------------------------------------------
# subcommands


def cmd_keygen(cfg, args) -> int:
    key = key_from_seed(bytes.fromhex(args.seed)) if args.seed else generate_key()
    save_key(args.out, key)
    emit(cfg, {"key_file": str(args.out), "public_key": public_key_bytes(key)})
    return EXIT_OK


def cmd_trust(cfg, args) -> int:
    trust = _trust(cfg, must_exist=args.trust_cmd != "add")
    if args.trust_cmd == "add":
        if args.key_file:
            pub = public_key_bytes(load_key(args.key_file))
        else:
            pub = bytes.fromhex(_need(args.public_key, "--public-key or --key-file"))
        domains = list(args.domain or [])
        domains += [server_authority(sc, cfg.base_domain) for sc in args.server_code or []]
        trust.add(args.distributor, pub, domains, approved=args.approved)
    else:
        if trust.get(args.distributor) is None:
            raise MediaProvError(f"{args.distributor} is not on the trust list")
        trust.approve(args.distributor, not args.revoke)
    trust.save(cfg.trust_list_path)
    e = trust.get(args.distributor)
    emit(cfg, {"distributor": args.distributor, "approved": e.approved, "domains": list(e.authority_domains)})
    return EXIT_OK


def cmd_produce(cfg, args) -> int:
    registry = _registry(cfg)
    if args.source:
        source = SourceEssence.from_media(parse_media(Path(args.source).read_bytes()))
    else:
        source = synthetic_source(args.synthetic, seed=args.seed, fps=args.fps)
    config = BroadcastConfig(
        server_code=args.server_code,
        start_interval_code=args.start_code,
        distributor_id=args.distributor,
        signing_key=load_key(args.key),
        base_domain=cfg.base_domain,
        dhs_cell_count=args.dhs_cells,
        fragment_duration=args.fragment_duration,
        video_fps=source.fps,
        title=args.title,
        created_at=args.created_at,
    )
    published = publish_stream(produce_replica(source, config), registry, args.live_edge)
    emit(
        cfg,
        {
            "server_code": config.server_code,
            "authority": server_authority(config.server_code, cfg.base_domain),
            "dhs": [
                {"id": d.dhs_id, "binx": d.first_interval_code, "einx": d.last_interval_code,
                 "start": d.media_start, "end": d.media_end}
                for d in published
            ],
        },
    )
    return EXIT_OK


def cmd_serve(cfg, args) -> int:
    server = RecoveryServer(_registry(cfg), cfg.base_domain, args.host, args.port)
    if args.address_file:
        Path(args.address_file).write_text(server.address + "\n")
    emit(cfg, {"address": server.address, "base_domain": cfg.base_domain})
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


class _Replica:
    """Adapter so registry replicas can feed :func:`simulate_capture`."""

    def __init__(self, data: bytes):
        self.replica = parse_media(data)


def cmd_capture(cfg, args) -> int:
    registry = _registry(cfg)
    records = registry.records_for(args.server_code)
    if not records:
        raise MediaProvError(f"registry holds no DHS for server code {args.server_code}")
    stream = [_Replica(registry.asset(r.dhs_id)) for r in records]
    clip = simulate_capture(stream, args.start, args.end)
    if args.erase_watermark:
        audio = clip.audio_track_id()
        clip = replace(clip, fragments=tuple(
            replace(f, sample_data=pcm_to_bytes(erase_watermark(pcm_from_bytes(f.sample_data))))
            if f.track_id == audio else f
            for f in clip.fragments
        ))
    if args.perturb is not None:
        clip = perturb_essence(clip, args.perturb)
    data = serialize_media(clip)
    Path(args.out).write_bytes(data)
    emit(cfg, {"out": str(args.out), "bytes": len(data), "duration": clip.duration})
    return EXIT_OK


def cmd_extract(cfg, args) -> int:
    obj = parse_media(Path(args.file).read_bytes())
    tid = obj.audio_track_id()
    segments = extract_segments(pcm_from_bytes(obj.essence(tid))) if tid is not None else []
    emit(
        cfg,
        {
            "segments": [
                {"server_code": s.server_code, "binx": s.first_interval_code, "einx": s.last_interval_code,
                 "first_cell_sample": s.first_cell_sample, "offset_seconds": s.first_cell_media_offset}
                for s in segments
            ]
        },
    )
    return EXIT_OK


def cmd_validate(cfg, args) -> int:
    obj = parse_media(Path(args.file).read_bytes())
    policy = PlatformPolicy(Action(args.policy), CanonicalDecision(args.decision))
    outcome = validate_media_object(obj, _trust(cfg), _client(cfg, args), policy, approve=args.approve)
    if args.canonical_out and outcome.canonical is not None:
        Path(args.canonical_out).write_bytes(serialize_media(outcome.canonical.media))
    emit(cfg, outcome.to_dict())
    return EXIT_OK if outcome.success else EXIT_EXCEPTION


def cmd_clip_canonical(cfg, args) -> int:
    client = _client(cfg, args)
    response = client.recover(Vp1Payload(args.server_code, args.binx), args.einx)
    trust = _trust(cfg) if cfg.trust_list_path else None
    try:
        clip = produce_canonical_clip(response, args.binx, args.einx, client.fetch, trust=trust)
    except MediaProvError as exc:
        emit(cfg, {"valid": False, "error": str(exc.args[0]) if exc.args else str(exc)})
        return EXIT_EXCEPTION
    if args.out:
        Path(args.out).write_bytes(serialize_media(clip.media))
    emit(cfg, {"valid": True, "start": clip.start_time, "end": clip.end_time, "dhs": list(clip.dhs_ids),
               "fragments_checked": len(clip.checks), "out": args.out})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mediaprov", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="key = value config file (also MEDIAPROV_CONFIG)")
    p.add_argument("--registry", help="registry directory (DHS records and replicas)")
    p.add_argument("--trust", help="trust list file")
    p.add_argument("--base-domain", help="recovery base domain (default wm.test)")
    p.add_argument("--resolve", action="append", metavar="HOST=ADDR", help="pin a host to addr:port; * for any")
    p.add_argument("--format", choices=["json", "cbor"], help="output format (default json)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("keygen", help="create an Ed25519 signing key")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", help="32-byte hex seed for a reproducible key")
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("trust", help="edit the trust list")
    tsub = s.add_subparsers(dest="trust_cmd", required=True, parser_class=_Parser)
    t = tsub.add_parser("add", help="register a distributor")
    t.add_argument("distributor")
    t.add_argument("--public-key", help="hex Ed25519 public key")
    t.add_argument("--key-file", help="take the public key from a key file")
    t.add_argument("--domain", action="append", help="recovery authority hostname")
    t.add_argument("--server-code", type=int, action="append", help="add the authority for this server code")
    t.add_argument("--approved", action="store_true")
    t = tsub.add_parser("approve", help="approve (or --revoke) a distributor")
    t.add_argument("distributor")
    t.add_argument("--revoke", action="store_true")
    s.set_defaults(func=cmd_trust)

    s = sub.add_parser("produce", help="watermark, segment, sign and publish a broadcast")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--source", help="PMF4 file with PCM audio and video tracks")
    src.add_argument("--synthetic", type=float, metavar="SECONDS", help="generate a synthetic programme")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fps", type=int, default=25)
    s.add_argument("--key", required=True)
    s.add_argument("--distributor", required=True)
    s.add_argument("--server-code", type=int, required=True)
    s.add_argument("--start-code", type=int, default=0)
    s.add_argument("--dhs-cells", type=int, default=20)
    s.add_argument("--fragment-duration", type=float, default=2.0)
    s.add_argument("--title", default="live broadcast")
    s.add_argument("--created-at", help="fixed claim timestamp for reproducible output")
    s.add_argument("--live-edge", type=float, help="publish only DHS complete by this broadcast time")
    s.set_defaults(func=cmd_produce)

    s = sub.add_parser("serve", help="run the recovery server over the registry")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=0)
    s.add_argument("--address-file", help="write host:port here once listening")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("capture", help="simulate a stripped, re-containerized clip capture")
    s.add_argument("--server-code", type=int, required=True)
    s.add_argument("--start", type=float, required=True, help="seconds from stream start")
    s.add_argument("--end", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--perturb", type=int, metavar="SEED", help="re-encode the essence")
    s.add_argument("--erase-watermark", action="store_true")
    s.set_defaults(func=cmd_capture)

    s = sub.add_parser("extract", help="list watermark segments in a file")
    s.add_argument("file")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("validate", help="run full validation and print the outcome report")
    s.add_argument("file")
    s.add_argument("--policy", choices=[a.value for a in Action], default=Action.REPLACE.value)
    s.add_argument("--decision", choices=[d.value for d in CanonicalDecision], default=CanonicalDecision.AUTOMATIC.value)
    s.add_argument("--approve", action="store_true", help="approve pending canonical processing")
    s.add_argument("--canonical-out", help="write the canonical clip here")
    s.add_argument("--local", action="store_true", help="answer recovery from --registry without HTTP")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("clip-canonical", help="walk DHS entries from BINX to EINX into a validated clip")
    s.add_argument("--server-code", type=int, required=True)
    s.add_argument("--binx", type=int, required=True)
    s.add_argument("--einx", type=int, required=True)
    s.add_argument("--out")
    s.add_argument("--local", action="store_true")
    s.set_defaults(func=cmd_clip_canonical)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
        cfg = build_config(args)
        return args.func(cfg, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (MediaProvError, OSError, ValueError, KeyError) as exc:
        print(f"mediaprov: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

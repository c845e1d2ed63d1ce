"""Command line entry point: configure and serve the adapter."""

from __future__ import annotations

import argparse
import sys

from semnav_adapter.backends import BackendUnavailable
from semnav_adapter.config import BACKENDS, MODES, AdapterConfig
from semnav_adapter.service import build_app


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="semnav-adapter",
        description="Serve embedding, segmentation, and scene-reasoning endpoints",
    )
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--backend", choices=BACKENDS, default="offline")
    p.add_argument("--mode", choices=MODES, default="off")
    p.add_argument("--fixtures", default=None, help="fixture directory for record/replay")
    p.add_argument("--device", default="cpu")
    p.add_argument("--embedder", default=None, help="embedder model identifier")
    p.add_argument("--segmenter", default=None, help="segmenter model identifier")
    p.add_argument("--reasoner", default=None, help="reasoner model identifier")
    p.add_argument("--reasoner-url", default=None, help="chat-completions base URL")
    p.add_argument("--api-key-env", default=None, help="env var holding the reasoner key")
    p.add_argument("--timeout", type=float, default=30.0, help="default backend timeout (s)")
    p.add_argument(
        "--endpoint-timeout",
        action="append",
        default=[],
        metavar="NAME=SECONDS",
        help="per-endpoint timeout override, repeatable",
    )
    p.add_argument("--response-cache", action="store_true")
    p.add_argument("--max-image-bytes", type=int, default=4 * 1024 * 1024)
    p.add_argument("--log-level", default="warning")
    return p


def config_from_args(args: argparse.Namespace) -> AdapterConfig:
    per_endpoint: dict = {}
    for spec in args.endpoint_timeout:
        name, eq, value = spec.partition("=")
        if not eq or not name:
            raise ValueError(f"bad --endpoint-timeout {spec!r}, expected NAME=SECONDS")
        per_endpoint[name] = float(value)
    overrides = {}
    for field_name, value in (
        ("embedder_id", args.embedder),
        ("segmenter_id", args.segmenter),
        ("reasoner_id", args.reasoner),
    ):
        if value is not None:
            overrides[field_name] = value
    return AdapterConfig(
        backend=args.backend,
        mode=args.mode,
        fixture_dir=args.fixtures,
        host=args.host,
        port=args.port,
        device=args.device,
        reasoner_url=args.reasoner_url,
        api_key_env=args.api_key_env,
        timeout_s=args.timeout,
        endpoint_timeout_s=per_endpoint,
        response_cache=args.response_cache,
        max_image_bytes=args.max_image_bytes,
        **overrides,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        app = build_app(config)
    except BackendUnavailable as exc:
        print(f"error: backend not ready: {exc}", file=sys.stderr)
        return 1
    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port, log_level=args.log_level)
    return 0


if __name__ == "__main__":
    sys.exit(main())

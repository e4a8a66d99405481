"""Command-line client for the scenario service.

All operations go through the HTTP API: against a remote server when
--server is given, otherwise against an in-process instance of the app.
Exit codes: 0 ok, 2 config parse failure, 3 validation failure, 4 run abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_ABORT = 4

_KIND_EXIT = {"parse": EXIT_PARSE, "validation": EXIT_VALIDATION, "abort": EXIT_ABORT}
_MODES = {"dec": "decentralized", "cen": "centralized"}

logger = logging.getLogger("ergoswarm")


def _make_client(server: str | None):
    import httpx

    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        # the in-process transport trips a deprecation notice in some
        # starlette/httpx pairings; it is harmless for this use
        warnings.simplefilter("ignore", DeprecationWarning)
        from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def _request_body(args) -> dict | int:
    """Build the service request payload; returns an exit code on failure."""
    from .scenario import ConfigParseError, load_config_file

    body: dict = {}
    if getattr(args, "preset", None):
        body["preset"] = args.preset
    elif getattr(args, "config", None):
        try:
            body["config"] = load_config_file(args.config)
        except ConfigParseError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
    else:
        print("error: provide --config PATH or --preset NAME", file=sys.stderr)
        return EXIT_PARSE
    if getattr(args, "seed", None) is not None:
        body["seed"] = args.seed
    if getattr(args, "mode", None):
        body["mode"] = _MODES[args.mode]
    if getattr(args, "rounds_per_step", None) is not None:
        body["rounds_per_step"] = args.rounds_per_step
    if getattr(args, "workers", None) is not None:
        body["workers"] = args.workers
    return body


def _fail_from_response(resp) -> int:
    try:
        detail = resp.json().get("detail", {})
    except Exception:
        detail = {}
    kind = detail.get("kind", "abort") if isinstance(detail, dict) else "abort"
    errors = detail.get("errors", [resp.text]) if isinstance(detail, dict) else [resp.text]
    for err in errors:
        print(f"error ({kind}): {err}", file=sys.stderr)
    return _KIND_EXIT.get(kind, EXIT_ABORT)


def _write_files(out_dir: str, files: dict[str, str]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        (out / name).write_text(content, encoding="utf-8")
        logger.info("wrote %s", out / name)


def cmd_run(args) -> int:
    body = _request_body(args)
    if isinstance(body, int):
        return body
    with _make_client(args.server) as client:
        resp = client.post("/api/runs", json=body)
        if resp.status_code != 200:
            return _fail_from_response(resp)
        payload = resp.json()
    _write_files(args.out, payload["files"])
    print(
        f"run {payload['run_id']}: {payload['name']} ({payload['mode']}, seed {payload['seed']}) "
        f"final collective metric {payload['final_metric_collective']:.6g}"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    body = _request_body(args)
    if isinstance(body, int):
        return body
    with _make_client(args.server) as client:
        resp = client.post("/api/compare", json=body)
        if resp.status_code != 200:
            return _fail_from_response(resp)
        payload = resp.json()
    _write_files(args.out, payload["files"])
    print(
        f"compare {payload['run_id']}: {payload['name']} seed {payload['seed']} "
        f"final decentralized/centralized ratio {payload['final_ratio']:.4f}"
    )
    return EXIT_OK


def cmd_presets(args) -> int:
    with _make_client(args.server) as client:
        resp = client.get("/api/presets")
        if resp.status_code != 200:
            return _fail_from_response(resp)
        presets = resp.json()
    for info in presets:
        cfg = info["config"]
        print(
            f"{info['name']}: {len(cfg['agents'])} agents, phi={cfg['phi']['kind']}, "
            f"{cfg['duration']:.0f} s"
        )
        if args.json:
            print(json.dumps(cfg, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_validate(args) -> int:
    body = _request_body(args)
    if isinstance(body, int):
        return body
    body.pop("seed", None)
    with _make_client(args.server) as client:
        resp = client.post("/api/validate", json=body)
        if resp.status_code != 200:
            return _fail_from_response(resp)
        payload = resp.json()
    if payload["valid"]:
        print("config is valid")
        return EXIT_OK
    for violation in payload["violations"]:
        print(f"violation: {violation}", file=sys.stderr)
    return EXIT_VALIDATION


def cmd_export(args) -> int:
    run_dir = Path(args.run_dir)
    jsonl_path = run_dir / "run.jsonl"
    config_path = run_dir / "config.resolved.json"
    if not jsonl_path.exists() or not config_path.exists():
        print(
            f"error: {run_dir} must hold run.jsonl and config.resolved.json",
            file=sys.stderr,
        )
        return EXIT_PARSE
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        print(f"error: cannot parse {config_path.name}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    body = {"run_jsonl": jsonl_path.read_text(encoding="utf-8"), "config": config}
    with _make_client(args.server) as client:
        resp = client.post("/api/export", json=body)
        if resp.status_code != 200:
            return _fail_from_response(resp)
        payload = resp.json()
    _write_files(args.out, payload["files"])
    print(f"exported {', '.join(sorted(payload['files']))} to {args.out}")
    return EXIT_OK


def _add_common(parser, with_mode=True, with_out=True):
    parser.add_argument("--config", help="scenario config file (.json or .toml)")
    parser.add_argument("--preset", help="preset name instead of a config file")
    parser.add_argument("--seed", type=int, help="seed override")
    if with_mode:
        parser.add_argument("--mode", choices=sorted(_MODES), help="mode override")
    parser.add_argument(
        "--rounds-per-step", dest="rounds_per_step", type=int,
        help="consensus rounds per sampling interval",
    )
    parser.add_argument("--workers", type=int, help="parallel agent workers")
    if with_out:
        parser.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergoswarm",
        description="Decentralized ergodic coverage scenarios (thin service client)",
    )
    parser.add_argument("--server", help="base URL of a running service; in-process when omitted")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one scenario and save its artifacts")
    _add_common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="run both modes and tabulate the metric ratio")
    _add_common(p_cmp, with_mode=False)
    p_cmp.set_defaults(fn=cmd_compare)

    p_pre = sub.add_parser("presets", help="list the documented presets")
    p_pre.add_argument("--json", action="store_true", help="dump full preset configs")
    p_pre.set_defaults(fn=cmd_presets)

    p_val = sub.add_parser("validate", help="check a config without running it")
    _add_common(p_val, with_mode=False, with_out=False)
    p_val.set_defaults(fn=cmd_validate)

    p_exp = sub.add_parser("export", help="emit tidy plot data from a saved run")
    p_exp.add_argument("--run-dir", dest="run_dir", required=True, help="directory of a saved run")
    p_exp.add_argument("--out", required=True, help="output directory")
    p_exp.set_defaults(fn=cmd_export)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("ERGOSWARM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

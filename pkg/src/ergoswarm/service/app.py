"""FastAPI service exposing the scenario engine.

Runs execute synchronously (seconds to a couple of minutes) and their
artifacts are retained in an in-memory store keyed by run id, so multiple
clients can launch experiments and fetch logs afterwards.
"""

from __future__ import annotations

import json
import uuid

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..scenario import (
    PRESET_NAMES,
    ScenarioConfig,
    config_from_dict,
    preset,
    resolve_config,
    validate_config,
)
from ..scenario.runner import (
    ConfigInvalid,
    RunAborted,
    RunLog,
    config_with_mode,
    run_centralized,
    run_decentralized,
    static_phi_field,
)
from ..spatial import field_csv_text
from .schemas import (
    CompareResponse,
    ExportRequest,
    ExportResponse,
    PresetInfo,
    RunRequest,
    RunResponse,
    RunSummary,
    ValidateRequest,
    ValidateResponse,
)


def _error(status: int, kind: str, errors: list[str]) -> HTTPException:
    return HTTPException(status_code=status, detail={"kind": kind, "errors": errors})


def _request_config(req: RunRequest | ValidateRequest) -> ScenarioConfig:
    if (req.config is None) == (req.preset is None):
        raise _error(400, "parse", ["provide exactly one of 'config' or 'preset'"])
    if req.preset is not None:
        if req.preset not in PRESET_NAMES:
            raise _error(
                400, "validation",
                [f"unknown preset '{req.preset}', expected one of {list(PRESET_NAMES)}"],
            )
        cfg = preset(req.preset)
    else:
        try:
            cfg = config_from_dict(req.config)
        except ValueError as exc:
            raise _error(400, "validation", [str(exc)]) from None
    if isinstance(req, RunRequest):
        data = cfg.to_dict()
        if req.seed is not None:
            data["seed"] = req.seed
        if req.mode is not None:
            data["mode"] = req.mode
        if req.rounds_per_step is not None:
            data["network"]["rounds_per_step"] = req.rounds_per_step
        if req.workers is not None:
            data["workers"] = req.workers
        try:
            cfg = config_from_dict(data)
        except ValueError as exc:
            raise _error(400, "validation", [str(exc)]) from None
    return cfg


def _resolve_and_validate(cfg: ScenarioConfig) -> ScenarioConfig:
    try:
        resolved = cfg if cfg.resolved else resolve_config(cfg)
    except ValueError as exc:
        raise _error(400, "validation", [str(exc)]) from None
    violations = validate_config(resolved)
    if violations:
        raise _error(400, "validation", violations)
    return resolved


def _execute(resolved: ScenarioConfig) -> RunLog:
    runner = run_centralized if resolved.mode == "centralized" else run_decentralized
    try:
        return runner(resolved)
    except ConfigInvalid as exc:
        raise _error(400, "validation", exc.violations) from None
    except RunAborted as exc:
        raise _error(
            500, "abort",
            [f"run aborted at step {exc.step}"
             + (f" (agent {exc.agent})" if exc.agent is not None else "")
             + f": {exc}"],
        ) from None


def _config_snapshot_text(resolved: ScenarioConfig) -> str:
    return json.dumps(resolved.to_dict(), sort_keys=True, indent=2) + "\n"


def create_app() -> FastAPI:
    app = FastAPI(title="ergoswarm", version=__version__)
    app.state.runs = {}

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/api/presets", response_model=list[PresetInfo])
    def list_presets():
        return [PresetInfo(name=n, config=preset(n).to_dict()) for n in PRESET_NAMES]

    @app.post("/api/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest):
        try:
            cfg = _request_config(req)
        except HTTPException as exc:
            detail = exc.detail
            if isinstance(detail, dict) and detail.get("kind") == "validation":
                return ValidateResponse(valid=False, violations=detail["errors"])
            raise
        try:
            resolved = cfg if cfg.resolved else resolve_config(cfg)
        except ValueError as exc:
            return ValidateResponse(valid=False, violations=[str(exc)])
        violations = validate_config(resolved)
        return ValidateResponse(valid=not violations, violations=violations)

    @app.post("/api/runs", response_model=RunResponse)
    def launch_run(req: RunRequest):
        cfg = _request_config(req)
        resolved = _resolve_and_validate(cfg)
        log = _execute(resolved)
        files = {
            "run.jsonl": log.jsonl_text(),
            "summary.csv": log.summary_csv_text(),
            "config.resolved.json": _config_snapshot_text(resolved),
        }
        run_id = uuid.uuid4().hex
        meta = RunResponse(
            run_id=run_id,
            name=resolved.name,
            mode=resolved.mode,
            seed=resolved.seed,
            duration=resolved.duration,
            final_metric_collective=log.records[-1]["metric_collective"],
            files=files,
        )
        app.state.runs[run_id] = meta
        return meta

    @app.get("/api/runs/{run_id}", response_model=RunSummary)
    def run_summary(run_id: str):
        meta = app.state.runs.get(run_id)
        if meta is None:
            raise _error(404, "validation", [f"unknown run id {run_id}"])
        return RunSummary(
            run_id=meta.run_id,
            name=meta.name,
            mode=getattr(meta, "mode", "compare"),
            seed=meta.seed,
            duration=getattr(meta, "duration", 0.0),
            final_metric_collective=getattr(
                meta, "final_metric_collective", getattr(meta, "final_ratio", 0.0)
            ),
            file_names=sorted(meta.files),
        )

    @app.get("/api/runs/{run_id}/files/{name}")
    def run_file(run_id: str, name: str):
        meta = app.state.runs.get(run_id)
        if meta is None or name not in meta.files:
            raise _error(404, "validation", [f"unknown run file {run_id}/{name}"])
        return {"name": name, "content": meta.files[name]}

    @app.post("/api/compare", response_model=CompareResponse)
    def compare(req: RunRequest):
        cfg = _request_config(req)
        resolved = _resolve_and_validate(cfg)
        log_dec = _execute(config_with_mode(resolved, "decentralized"))
        log_cen = _execute(config_with_mode(resolved, "centralized"))
        rows = ["t,E_dec,E_cen,ratio"]
        ratio = float("nan")
        for rd, rc in zip(log_dec.records, log_cen.records):
            e_dec = rd["metric_collective"]
            e_cen = rc["metric_collective"]
            ratio = e_dec / e_cen if e_cen > 0 else float("nan")
            rows.append(f"{rd['t']!r},{e_dec!r},{e_cen!r},{ratio!r}")
        files = {
            "decentralized.jsonl": log_dec.jsonl_text(),
            "centralized.jsonl": log_cen.jsonl_text(),
            "compare.csv": "\n".join(rows) + "\n",
            "config.resolved.json": _config_snapshot_text(resolved),
        }
        run_id = uuid.uuid4().hex
        meta = CompareResponse(
            run_id=run_id,
            name=resolved.name,
            seed=resolved.seed,
            final_ratio=ratio,
            files=files,
        )
        app.state.runs[run_id] = meta
        return meta

    @app.post("/api/export", response_model=ExportResponse)
    def export(req: ExportRequest):
        try:
            cfg = config_from_dict(req.config)
        except ValueError as exc:
            raise _error(400, "validation", [str(exc)]) from None
        records = RunLog.parse_jsonl(req.run_jsonl)
        if not records:
            raise _error(400, "validation", ["run log holds no records"])
        rows = ["t,agent,x,y"]
        for rec in records:
            for agent in rec["agents"]:
                state = agent["state"]
                rows.append(
                    f"{rec['t']!r},{agent['id']},{state[0]!r},{state[1]!r}"
                )
        files = {"trajectories.csv": "\n".join(rows) + "\n"}
        field = static_phi_field(cfg)
        if field is not None:
            files["phi.csv"] = field_csv_text(field)
        return ExportResponse(files=files)

    return app


app = create_app()

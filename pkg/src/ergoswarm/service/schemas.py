"""Request/response models for the scenario service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class RunRequest(BaseModel):
    """Launch one scenario run. Exactly one of config/preset must be given;
    the overrides are applied before resolution."""

    config: dict | None = None
    preset: str | None = None
    seed: int | None = None
    mode: str | None = None
    rounds_per_step: int | None = Field(default=None, ge=1)
    workers: int | None = Field(default=None, ge=1)


class RunResponse(BaseModel):
    run_id: str
    name: str
    mode: str
    seed: int
    duration: float
    final_metric_collective: float
    files: dict[str, str]


class RunSummary(BaseModel):
    run_id: str
    name: str
    mode: str
    seed: int
    duration: float
    final_metric_collective: float
    file_names: list[str]


class ValidateRequest(BaseModel):
    config: dict | None = None
    preset: str | None = None


class ValidateResponse(BaseModel):
    valid: bool
    violations: list[str]


class PresetInfo(BaseModel):
    name: str
    config: dict


class CompareResponse(BaseModel):
    run_id: str
    name: str
    seed: int
    final_ratio: float
    files: dict[str, str]


class ExportRequest(BaseModel):
    run_jsonl: str
    config: dict


class ExportResponse(BaseModel):
    files: dict[str, str]


class ErrorDetail(BaseModel):
    kind: str  # "parse" | "validation" | "abort"
    errors: list[str]

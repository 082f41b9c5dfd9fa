"""Request/response models of the compute service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class VerifyRequest(BaseModel):
    seed: int = 0


class VerifyResponse(BaseModel):
    passed: bool
    exit_code: int
    report: dict


class RunRequest(BaseModel):
    config_text: str = Field(description="run configuration in the INI format")
    out_dir: str = Field(description="directory (on the service host) for run artifacts")
    seed: int | None = Field(default=None, description="overrides [run] seed when set")


class RunResponse(BaseModel):
    status: str
    exit_code: int
    summary: dict = {}
    error: str | None = None


class TablesResponse(BaseModel):
    tables: dict


class HealthResponse(BaseModel):
    status: str
    version: str

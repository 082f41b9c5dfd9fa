"""FastAPI service exposing the run verbs of the core package.

One endpoint per verb; computations run synchronously in the request (runs
are desk-scale).  Config parsing errors map to HTTP 400 with exit_code 2 in
the body; numerical aborts complete the request with exit_code 3.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from .. import config as cf
from .. import runs
from .schemas import (HealthResponse, RunRequest, RunResponse, TablesResponse,
                      VerifyRequest, VerifyResponse)


def _apply_seed_override(text: str, seed: int | None) -> str:
    """Replace (or insert) the [run] seed key without reordering the config."""
    if seed is None:
        return text
    out, in_run, replaced, has_run = [], False, False, False
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            if in_run and not replaced:
                out.append(f"seed = {seed}")
                replaced = True
            in_run = stripped == "[run]"
            has_run = has_run or in_run
        elif in_run and stripped.split("=", 1)[0].strip() == "seed":
            line = f"seed = {seed}"
            replaced = True
        out.append(line)
    if in_run and not replaced:
        out.append(f"seed = {seed}")
    elif not has_run:
        out.extend(["[run]", f"seed = {seed}"])
    return "\n".join(out)


def _run_endpoint(command: str, runner):
    def handler(req: RunRequest):
        try:
            text = _apply_seed_override(req.config_text, req.seed)
            cfg = cf.parse_config(text, command)
        except cf.ConfigError as exc:
            return JSONResponse(status_code=400, content=RunResponse(
                status="config_error", exit_code=runs.EXIT_CONFIG_ERROR,
                error=str(exc)).model_dump())
        summary = runner(cfg, req.out_dir)
        return RunResponse(status=summary["status"], exit_code=summary["exit_code"],
                           summary=summary)
    return handler


def create_app() -> FastAPI:
    app = FastAPI(title="g2flow service", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/tables", response_model=TablesResponse)
    def tables():
        return TablesResponse(tables=runs.dump_tables())

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest):
        summary = runs.run_verify(seed=req.seed)
        return VerifyResponse(passed=summary["report"]["passed"],
                              exit_code=summary["exit_code"],
                              report=summary["report"])

    app.post("/evolve", response_model=RunResponse)(_run_endpoint("evolve", runs.run_evolve))
    app.post("/energy", response_model=RunResponse)(_run_endpoint("energy", runs.run_energy))
    app.post("/spectrum", response_model=RunResponse)(_run_endpoint("spectrum", runs.run_spectrum))
    app.post("/symbol", response_model=RunResponse)(_run_endpoint("symbol", runs.run_symbol))
    return app


app = create_app()

"""HTTP service exposing the experiment harness.

POST /run executes one experiment synchronously and returns its report rows.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .experiments import EXPERIMENTS, ExperimentConfig, ReportRow, run_experiment


class RunRequest(BaseModel):
    experiment: str
    d: int = Field(default=2, ge=2)
    d_env: int = Field(default=2, ge=1)
    n: int = Field(default=3, ge=2)
    ensemble: int = Field(default=20, ge=1)
    seed: int = 0


class RowModel(BaseModel):
    experiment: str
    seed: int
    quantity: str
    value: float
    target: float
    tolerance: float
    mode: str
    passed: bool

    @classmethod
    def from_row(cls, row: ReportRow) -> "RowModel":
        return cls(
            experiment=row.experiment,
            seed=row.seed,
            quantity=row.quantity,
            value=row.value,
            target=row.target,
            tolerance=row.tolerance,
            mode=row.mode,
            passed=row.passed,
        )


class RunResponse(BaseModel):
    rows: list[RowModel]
    all_passed: bool


app = FastAPI(title="multift", version="0.1.0")


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.get("/experiments")
def experiments() -> dict:
    return {"experiments": list(EXPERIMENTS)}


@app.post("/run", response_model=RunResponse)
def run(req: RunRequest) -> RunResponse:
    try:
        config = ExperimentConfig(
            experiment=req.experiment,
            d=req.d,
            d_env=req.d_env,
            n=req.n,
            ensemble=req.ensemble,
            seed=req.seed,
        )
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    rows = run_experiment(config)
    models = [RowModel.from_row(r) for r in rows]
    return RunResponse(rows=models, all_passed=all(m.passed for m in models))

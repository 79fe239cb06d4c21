"""FastAPI service wrapping the pipeline stages.

The heavy work (fitting, Q-matrix construction) happens once; afterwards the
stored artifacts can be re-analyzed through /report and /diagnose without
refitting, so one fitted run can serve many clients.  Endpoints run
synchronously; at survey scale, put long fits behind the CLI or a worker.

Input problems map to HTTP 422, runtime failures to HTTP 500, both with a
structured ``detail`` of {error, message}.
"""

from __future__ import annotations

from functools import wraps

from fastapi import FastAPI, HTTPException

from .. import __version__, pipeline
from ..errors import InputError, MissingArtifact, RuntimeFailure
from .schemas import (
    DiagnoseResponse,
    FitResponse,
    HealthResponse,
    QMatrixResponse,
    ReportResponse,
    RunSettings,
    SimulateResponse,
    ValidateResponse,
)


def _guarded(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InputError as exc:
            raise HTTPException(
                status_code=422, detail={"error": type(exc).__name__, "message": str(exc)}
            ) from exc
        except (RuntimeFailure, FileNotFoundError) as exc:
            raise HTTPException(
                status_code=500, detail={"error": type(exc).__name__, "message": str(exc)}
            ) from exc

    return wrapper


def create_app() -> FastAPI:
    app = FastAPI(
        title="povmap",
        version=__version__,
        description="Small-area poverty estimation: fit once, store the Q-matrix, query decisions.",
    )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/validate", response_model=ValidateResponse)
    @_guarded
    def validate(settings: RunSettings) -> ValidateResponse:
        return ValidateResponse(**pipeline.run_validate(settings.to_run_config()))

    @app.post("/simulate", response_model=SimulateResponse)
    @_guarded
    def simulate(settings: RunSettings) -> SimulateResponse:
        return SimulateResponse(**pipeline.run_simulate(settings.to_run_config()))

    @app.post("/fit", response_model=FitResponse)
    @_guarded
    def fit(settings: RunSettings) -> FitResponse:
        return FitResponse(**pipeline.run_fit(settings.to_run_config()))

    @app.post("/qmatrix", response_model=QMatrixResponse)
    @_guarded
    def qmatrix(settings: RunSettings) -> QMatrixResponse:
        return QMatrixResponse(**pipeline.run_qmatrix(settings.to_run_config()))

    @app.post("/report", response_model=ReportResponse)
    @_guarded
    def report(settings: RunSettings) -> ReportResponse:
        return ReportResponse(**pipeline.run_report(settings.to_run_config()))

    @app.post("/diagnose", response_model=DiagnoseResponse)
    @_guarded
    def diagnose(settings: RunSettings) -> DiagnoseResponse:
        return DiagnoseResponse(**pipeline.run_diagnose(settings.to_run_config()))

    return app


app = create_app()

"""Pydantic request/response models for the service endpoints."""

from __future__ import annotations

from pydantic import BaseModel, Field, field_validator

from ..config import RunConfig, SimConfig


class SimSettings(BaseModel):
    comunas: int = Field(30, ge=1)
    psus_per_stratum: int = Field(6, ge=1)
    households_per_psu: int = Field(50, ge=1)
    covariates: int = Field(3, ge=0)
    sample_psus: int = Field(2, ge=1)
    sample_households: int = Field(10, ge=1)
    sd_household: float = Field(0.8, gt=0)
    sd_psu: float = Field(0.25, gt=0)
    sd_stratum: float = Field(0.3, gt=0)
    seed: int | None = None


class RunSettings(BaseModel):
    """Mirror of the flat run config; paths are server-local."""

    households: str | None = None
    covariates: str | None = None
    transforms: dict[str, str] = Field(default_factory=dict)
    line_urban: float | None = Field(None, gt=0)
    line_rural: float | None = Field(None, gt=0)
    alphas: list[float] = Field(default_factory=lambda: [0.0, 1.0])
    burn_in: int = Field(10_000, ge=0)
    draws: int = Field(10_000, ge=1)
    thin: int = Field(1, ge=1)
    chains: int = Field(4, ge=1)
    seed: int = 0
    beta_prior_sd: float = Field(1.0, gt=0)
    sd_prior_scale: float = Field(1.0, gt=0)
    multipliers: list[float] = Field(default_factory=lambda: [1.10, 1.25, 1.50])
    cutoff: float = Field(0.5, gt=0, lt=1)
    out: str = "."
    workers: int = Field(1, ge=1)
    sim: SimSettings = Field(default_factory=SimSettings)

    @field_validator("alphas")
    @classmethod
    def _alphas_nonnegative(cls, v: list[float]) -> list[float]:
        if not v or any(a < 0 for a in v):
            raise ValueError("alphas must be a non-empty list of values >= 0")
        return v

    @field_validator("multipliers")
    @classmethod
    def _multipliers_positive(cls, v: list[float]) -> list[float]:
        if not v or any(m <= 0 for m in v):
            raise ValueError("multipliers must be a non-empty list of positive values")
        return v

    def to_run_config(self) -> RunConfig:
        sim = SimConfig(**self.sim.model_dump())
        payload = self.model_dump(exclude={"sim"})
        return RunConfig(sim=sim, **payload)


class Issue(BaseModel):
    kind: str
    message: str
    row: int | None = None


class ValidateResponse(BaseModel):
    ok: bool
    issues: list[Issue]


class SimulateResponse(BaseModel):
    population: str
    sample: str
    covariates: str
    truth: str
    run_config: str
    comunas: int
    households: int
    sampled_households: int
    line_urban: float
    line_rural: float


class FitResponse(BaseModel):
    draws: str
    psrf: str
    parameters: int
    chains: int
    draws_per_chain: int
    max_rhat: float | None
    rhat_warnings: int


class QMatrixResponse(BaseModel):
    files: dict[str, str]
    comunas: int
    draws: int


class AlphaReport(BaseModel):
    alpha: float
    regional_direct: float
    thresholds: list[float]
    point: str
    flags: str
    extremes: str
    worst_comuna: str
    worst_prob: float
    best_comuna: str
    best_prob: float


class ReportResponse(BaseModel):
    reports: list[AlphaReport]


class DiagnoseResponse(BaseModel):
    psrf: str
    parameters: int
    max_rhat: float | None
    rhat_warnings: int


class HealthResponse(BaseModel):
    status: str
    version: str

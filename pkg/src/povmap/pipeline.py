"""Pipeline stages: validate, simulate, fit, qmatrix, report, diagnose.

Each stage reads its inputs from a ``RunConfig``, writes its artifacts into
the run's output directory, and returns a JSON-ready summary.  Stages are
restartable: qmatrix only needs the draws file, report only needs the
Q-matrix files, so nothing ever has to be refit to re-analyze.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pandas as pd

from . import data, decide, fgt, sampler, synth
from .config import RunConfig, write_config
from .errors import ConfigError, MissingArtifact, RosterMismatch
from .data import ValidationIssue

RHAT_WARN = 1.1
SYNTH_POOR_SHARE = 0.22  # default synthetic poverty lines put ~22% below


def alpha_label(alpha: float) -> str:
    return format(float(alpha), "g")


def draws_path(out: Path) -> Path:
    return out / "draws.csv"


def psrf_path(out: Path) -> Path:
    return out / "psrf.csv"


def qmatrix_path(out: Path, alpha: float) -> Path:
    return out / f"qmatrix_alpha{alpha_label(alpha)}.csv"


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg: RunConfig, *keys: str) -> None:
    missing = [k for k in keys if getattr(cfg, k) in (None, "")]
    if missing:
        raise ConfigError(f"config is missing required keys: {', '.join(missing)}")


def _lines(cfg: RunConfig) -> fgt.PovertyLines:
    _require(cfg, "line_urban", "line_rural")
    return fgt.PovertyLines(urban=cfg.line_urban, rural=cfg.line_rural)


def _load_inputs(cfg: RunConfig) -> tuple[data.HouseholdTable, data.CovariateTable]:
    _require(cfg, "households", "covariates")
    table = data.load_households(cfg.households)
    covariates = data.load_covariates(cfg.covariates, cfg.transforms)
    return table, covariates


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def run_validate(cfg: RunConfig) -> dict:
    """Check every input file and report all problems, not just the first."""
    issues: list[ValidationIssue] = []
    table = None
    if not cfg.households:
        issues.append(ValidationIssue("missing_config", "config key 'households' is not set"))
    elif not Path(cfg.households).exists():
        issues.append(ValidationIssue("missing_file", f"household file not found: {cfg.households}"))
    else:
        frame = pd.read_csv(
            cfg.households,
            dtype={"comuna_id": str, "psu_id": str, "household_id": str},
            float_precision="round_trip",
        )
        issues.extend(data.validate_household_frame(frame))
        if not issues:
            table = data.HouseholdTable.from_frame(frame)

    covariates = None
    if not cfg.covariates:
        issues.append(ValidationIssue("missing_config", "config key 'covariates' is not set"))
    elif not Path(cfg.covariates).exists():
        issues.append(ValidationIssue("missing_file", f"covariate file not found: {cfg.covariates}"))
    else:
        try:
            covariates = data.load_covariates(cfg.covariates, cfg.transforms)
        except Exception as exc:  # collect, do not abort: report everything
            issues.append(ValidationIssue(_issue_kind(exc), str(exc)))

    if table is not None and covariates is not None:
        try:
            covariates.design_for(table.comuna_ids)
        except RosterMismatch as exc:
            issues.append(ValidationIssue("roster_mismatch", str(exc)))

    return {"ok": not issues, "issues": [issue.as_dict() for issue in issues]}


def _issue_kind(exc: Exception) -> str:
    name = type(exc).__name__
    out = [name[0].lower()]
    for ch in name[1:]:
        if ch.isupper():
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def run_simulate(cfg: RunConfig) -> dict:
    """Generate a synthetic region, sample it, and write a ready-to-run setup.

    Writes population.csv, sample.csv, covariates.csv, true_params.txt, and a
    derived run.config (relative paths) into the output directory.  Poverty
    lines default to the population income quantile that puts about 22% of
    households below, separately for urban and rural.
    """
    out = _out_dir(cfg)
    sim = cfg.sim
    seed = cfg.seed if sim.seed is None else sim.seed
    pop_seed, sample_seed = (
        int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(2)
    )

    pop_cfg = synth.PopulationConfig(
        n_comunas=sim.comunas,
        psus_per_stratum=sim.psus_per_stratum,
        households_per_psu=sim.households_per_psu,
        n_covariates=sim.covariates,
        sd_household=sim.sd_household,
        sd_psu=sim.sd_psu,
        sd_stratum=sim.sd_stratum,
    )
    pop = synth.generate_population(pop_cfg, pop_seed)
    design = synth.SampleDesign(
        psus_per_stratum=sim.sample_psus, households_per_psu=sim.sample_households
    )
    sample = synth.draw_sample(pop, design, sample_seed)

    line_urban = cfg.line_urban
    line_rural = cfg.line_rural
    urban_mask = pop.stratum_urbanicity[pop.cell_stratum[pop.hh_cell]] == 1
    if line_urban is None:
        line_urban = float(np.quantile(pop.income[urban_mask], SYNTH_POOR_SHARE))
    if line_rural is None:
        rural = pop.income[~urban_mask]
        line_rural = float(np.quantile(rural if rural.size else pop.income, SYNTH_POOR_SHARE))

    population_table = data.HouseholdTable.from_frame(pop.household_frame())
    data.save_households(population_table, out / "population.csv")
    data.save_households(sample, out / "sample.csv")
    pop.covariate_frame().to_csv(out / "covariates.csv", index=False, float_format="%.17g",
                                 lineterminator="\n")

    truth_lines = [("seed", str(seed))] + pop.truth_items() + [
        ("line_urban", repr(line_urban)),
        ("line_rural", repr(line_rural)),
    ]
    (out / "true_params.txt").write_text(
        "".join(f"{k} = {v}\n" for k, v in truth_lines), encoding="utf-8"
    )

    derived = RunConfig(
        households=str(out / "sample.csv"),
        covariates=str(out / "covariates.csv"),
        transforms={f"x{j}": "identity" for j in range(1, sim.covariates + 1)},
        line_urban=line_urban,
        line_rural=line_rural,
        alphas=list(cfg.alphas),
        burn_in=cfg.burn_in,
        draws=cfg.draws,
        thin=cfg.thin,
        chains=cfg.chains,
        seed=cfg.seed,
        beta_prior_sd=cfg.beta_prior_sd,
        sd_prior_scale=cfg.sd_prior_scale,
        multipliers=list(cfg.multipliers),
        cutoff=cfg.cutoff,
        out=str(out),
        workers=cfg.workers,
    )
    write_config(derived, out / "run.config", relative_paths=True)

    return {
        "population": str(out / "population.csv"),
        "sample": str(out / "sample.csv"),
        "covariates": str(out / "covariates.csv"),
        "truth": str(out / "true_params.txt"),
        "run_config": str(out / "run.config"),
        "comunas": pop_cfg.n_comunas,
        "households": pop.n_households,
        "sampled_households": sample.n_households,
        "line_urban": line_urban,
        "line_rural": line_rural,
    }


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _write_psrf(rhat: dict[str, float], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("param,rhat\n")
        for name, value in rhat.items():
            fh.write(f"{name},{'nan' if math.isnan(value) else repr(value)}\n")


def _rhat_summary(rhat: dict[str, float]) -> tuple[float | None, int]:
    finite = [v for v in rhat.values() if not math.isnan(v)]
    max_rhat = max(finite) if finite else None
    warnings = sum(1 for v in rhat.values() if math.isnan(v) or v >= RHAT_WARN)
    return max_rhat, warnings


def run_fit(cfg: RunConfig) -> dict:
    """Fit the model by MCMC, write the draws file and the PSRF report."""
    out = _out_dir(cfg)
    table, covariates = _load_inputs(cfg)
    model = sampler.build_model_index(table, covariates)
    priors = sampler.PriorConfig(beta_prior_sd=cfg.beta_prior_sd, sd_prior_scale=cfg.sd_prior_scale)
    settings = sampler.McmcSettings(
        burn_in=cfg.burn_in, draws=cfg.draws, thin=cfg.thin, chains=cfg.chains, workers=cfg.workers
    )
    store = sampler.run_chains(model, priors, settings, cfg.seed)
    sampler.save_draws(store, draws_path(out))
    rhat = sampler.psrf(store)
    _write_psrf(rhat, psrf_path(out))
    max_rhat, warning_count = _rhat_summary(rhat)
    return {
        "draws": str(draws_path(out)),
        "psrf": str(psrf_path(out)),
        "parameters": len(rhat),
        "chains": settings.chains,
        "draws_per_chain": settings.draws,
        "max_rhat": max_rhat,
        "rhat_warnings": warning_count,
    }


# ---------------------------------------------------------------------------
# qmatrix
# ---------------------------------------------------------------------------

def run_qmatrix(cfg: RunConfig) -> dict:
    """Build and store one Q-matrix per alpha from the persisted draws."""
    out = _out_dir(cfg)
    table, covariates = _load_inputs(cfg)
    lines = _lines(cfg)
    path = draws_path(out)
    if not path.exists():
        raise MissingArtifact(f"draws file not found: {path} (run 'fit' first)")
    model = sampler.build_model_index(table, covariates)
    store = sampler.load_draws(path, model)
    files = {}
    for alpha in cfg.alphas:
        q = fgt.build_q_matrix(store, table, lines, alpha)
        target = qmatrix_path(out, alpha)
        fgt.save_q_matrix(q, target)
        files[alpha_label(alpha)] = str(target)
    return {"files": files, "comunas": table.n_comunas, "draws": store.total_draws}


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def run_report(cfg: RunConfig) -> dict:
    """Emit point/flags/extremes CSVs per alpha from stored Q-matrices."""
    out = _out_dir(cfg)
    table, _ = _load_inputs(cfg)
    lines = _lines(cfg)
    reports = []
    for alpha in cfg.alphas:
        source = qmatrix_path(out, alpha)
        if not source.exists():
            raise MissingArtifact(f"Q-matrix file not found: {source} (run 'qmatrix' first)")
        q = fgt.load_q_matrix(source, alpha)
        regional = fgt.direct_estimate(table, lines, alpha)
        report = decide.build_report(q, regional, cfg.multipliers, cfg.cutoff)
        label = alpha_label(alpha)
        point = out / f"point_alpha{label}.csv"
        flags = out / f"flags_alpha{label}.csv"
        extremes = out / f"extremes_alpha{label}.csv"
        decide.write_point_csv(report, point)
        decide.write_flags_csv(report, flags)
        decide.write_extremes_csv(report, extremes)
        worst, worst_prob = report.worst
        best, best_prob = report.best
        reports.append(
            {
                "alpha": float(alpha),
                "regional_direct": report.regional_direct,
                "thresholds": report.thresholds,
                "point": str(point),
                "flags": str(flags),
                "extremes": str(extremes),
                "worst_comuna": worst,
                "worst_prob": worst_prob,
                "best_comuna": best,
                "best_prob": best_prob,
            }
        )
    return {"reports": reports}


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def run_diagnose(cfg: RunConfig) -> dict:
    """Recompute split-Rhat from the persisted draws file."""
    out = _out_dir(cfg)
    table, covariates = _load_inputs(cfg)
    path = draws_path(out)
    if not path.exists():
        raise MissingArtifact(f"draws file not found: {path} (run 'fit' first)")
    model = sampler.build_model_index(table, covariates)
    store = sampler.load_draws(path, model)
    rhat = sampler.psrf(store)
    _write_psrf(rhat, psrf_path(out))
    max_rhat, warning_count = _rhat_summary(rhat)
    return {
        "psrf": str(psrf_path(out)),
        "parameters": len(rhat),
        "max_rhat": max_rhat,
        "rhat_warnings": warning_count,
    }

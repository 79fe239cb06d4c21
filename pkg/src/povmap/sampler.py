"""MCMC engine for the three-level normal model behind the poverty indices.

Households are normal around a PSU-level mean, PSU means are normal around a
stratum (comuna x urbanicity) mean, and stratum means regress on comuna
covariates with urbanicity-specific coefficients.  Coefficients get unit
normal priors and the three standard deviations get half-normal priors.
Location parameters have conjugate normal full conditionals (Gibbs); the
standard deviations are updated by univariate slice sampling on log sd.

A chain is strictly sequential; chains are independent, take their RNG
streams from ``SeedSequence(seed).spawn(n_chains)``, and can run in worker
processes without changing the result.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from .data import CellTable, CovariateTable, HouseholdTable
from .errors import (
    EmptyGroup,
    InsufficientDraws,
    MissingColumn,
    RosterMismatch,
    SingularPosteriorCovariance,
    SliceNonConvergence,
)

SD_FLOOR = 1e-12
_INIT_SD_FLOOR = 1e-3
_INIT_RIDGE = 1e-6


@dataclass(frozen=True)
class PriorConfig:
    """Weakly informative priors: N(0, sd^2) coefficients, half-normal SDs."""

    beta_prior_sd: float = 1.0
    sd_prior_scale: float = 1.0

    def __post_init__(self):
        if self.beta_prior_sd <= 0 or self.sd_prior_scale <= 0:
            raise ValueError("prior scales must be positive")


@dataclass(frozen=True)
class McmcSettings:
    burn_in: int = 10_000
    draws: int = 10_000
    thin: int = 1
    chains: int = 4
    workers: int = 1
    sample_scales: bool = True  # off for the fixed-variance sub-model

    def __post_init__(self):
        if self.burn_in < 0 or self.draws < 1 or self.thin < 1 or self.chains < 1 or self.workers < 1:
            raise ValueError("invalid MCMC settings")


@dataclass(frozen=True)
class ModelIndex:
    """Immutable view of one dataset: cell grouping plus the design matrix."""

    cells: CellTable
    design: np.ndarray  # (n_comunas, p), aligned to comuna_ids
    comuna_ids: tuple[str, ...]

    @property
    def n_cells(self) -> int:
        return self.cells.n_cells

    @property
    def n_strata(self) -> int:
        return self.cells.n_strata

    @property
    def n_coef(self) -> int:
        return self.design.shape[1]

    def linear_predictor(self, coef: np.ndarray) -> np.ndarray:
        """Per-stratum covariate effect x_c' b_u for the stratum's urbanicity."""
        rows = self.design[self.cells.stratum_comuna]
        return np.einsum("sp,sp->s", rows, coef[self.cells.stratum_urbanicity - 1])


def build_model_index(table: HouseholdTable, covariates: CovariateTable) -> ModelIndex:
    cells = table.cells
    if np.any(cells.count < 1):
        raise EmptyGroup("every (comuna, urbanicity, PSU) cell needs at least one household")
    design = covariates.design_for(table.comuna_ids)
    return ModelIndex(cells=cells, design=design, comuna_ids=tuple(table.comuna_ids))


@dataclass
class ModelState:
    """One full parameter configuration for a given model index."""

    model: ModelIndex
    psu_mean: np.ndarray      # per (comuna, urbanicity, PSU) cell
    stratum_mean: np.ndarray  # per (comuna, urbanicity) stratum
    coef: np.ndarray          # (2, p): urban and rural coefficient vectors
    sd_household: float
    sd_psu: float
    sd_stratum: float

    def validate(self) -> None:
        cells = self.model.cells
        if self.psu_mean.shape != (cells.n_cells,) or self.stratum_mean.shape != (cells.n_strata,):
            raise ValueError("state arrays do not match the model roster")
        if self.coef.shape != (2, self.model.n_coef):
            raise ValueError("coefficient block has the wrong shape")
        for sd in (self.sd_household, self.sd_psu, self.sd_stratum):
            if not np.isfinite(sd) or sd <= 0:
                raise ValueError("standard deviations must be positive and finite")


def init_state(model: ModelIndex, priors: PriorConfig = PriorConfig()) -> ModelState:
    """Deterministic starting point from group means and a ridge regression.

    PSU means start at within-cell averages of t, stratum means at the
    average of their PSU means, coefficients at ridge-stabilized least
    squares of stratum means on the design, and SDs at the corresponding
    residual SDs floored at 1e-3.
    """
    cells = model.cells
    if np.any(cells.count < 1):
        raise EmptyGroup("cannot initialize a roster cell with no households")
    psu_mean = cells.t_sum / cells.count
    stratum_mean = (
        np.bincount(cells.cell_stratum, weights=psu_mean, minlength=cells.n_strata)
        / cells.stratum_cell_count
    )
    p = model.n_coef
    coef = np.zeros((2, p))
    for u in (1, 2):
        mask = cells.stratum_urbanicity == u
        if not mask.any():
            continue
        x = model.design[cells.stratum_comuna[mask]]
        y = stratum_mean[mask]
        coef[u - 1] = np.linalg.solve(x.T @ x + _INIT_RIDGE * np.eye(p), x.T @ y)
    resid_h = cells.t_income - psu_mean[cells.hh_cell]
    resid_p = psu_mean - stratum_mean[cells.cell_stratum]
    resid_s = stratum_mean - model.linear_predictor(coef)
    return ModelState(
        model=model,
        psu_mean=psu_mean,
        stratum_mean=stratum_mean,
        coef=coef,
        sd_household=max(float(np.sqrt(np.mean(resid_h**2))), _INIT_SD_FLOOR),
        sd_psu=max(float(np.sqrt(np.mean(resid_p**2))), _INIT_SD_FLOOR),
        sd_stratum=max(float(np.sqrt(np.mean(resid_s**2))), _INIT_SD_FLOOR),
    )


# ---------------------------------------------------------------------------
# full conditionals
# ---------------------------------------------------------------------------

def psu_mean_conditionals(state: ModelState) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of each PSU mean's normal full conditional.

    Precision is n_cup / sd_household^2 + 1 / sd_psu^2; a cell with no
    households falls back to its stratum prior.
    """
    cells = state.model.cells
    prec = cells.count / state.sd_household**2 + 1.0 / state.sd_psu**2
    var = 1.0 / prec
    mean = var * (
        cells.t_sum / state.sd_household**2
        + state.stratum_mean[cells.cell_stratum] / state.sd_psu**2
    )
    return mean, var


def stratum_mean_conditionals(state: ModelState) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of each stratum mean's normal full conditional."""
    cells = state.model.cells
    psu_sum = np.bincount(cells.cell_stratum, weights=state.psu_mean, minlength=cells.n_strata)
    prec = cells.stratum_cell_count / state.sd_psu**2 + 1.0 / state.sd_stratum**2
    var = 1.0 / prec
    eta = state.model.linear_predictor(state.coef)
    mean = var * (psu_sum / state.sd_psu**2 + eta / state.sd_stratum**2)
    return mean, var


def coef_conditionals(
    state: ModelState, priors: PriorConfig, urbanicity: int
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of one urbanicity's coefficient vector.

    With no contributing comunas the prior N(0, beta_prior_sd^2 I) comes back
    unchanged.
    """
    cells = state.model.cells
    mask = cells.stratum_urbanicity == urbanicity
    x = state.model.design[cells.stratum_comuna[mask]]
    y = state.stratum_mean[mask]
    p = state.model.n_coef
    prec = x.T @ x / state.sd_stratum**2 + np.eye(p) / priors.beta_prior_sd**2
    cov = np.linalg.inv(prec)
    mean = cov @ (x.T @ y) / state.sd_stratum**2
    return mean, cov


# ---------------------------------------------------------------------------
# Gibbs and slice updates
# ---------------------------------------------------------------------------

def update_psu_means(state: ModelState, rng: np.random.Generator) -> ModelState:
    mean, var = psu_mean_conditionals(state)
    draw = mean + np.sqrt(var) * rng.standard_normal(mean.shape[0])
    return replace(state, psu_mean=draw)


def update_stratum_means(state: ModelState, rng: np.random.Generator) -> ModelState:
    mean, var = stratum_mean_conditionals(state)
    draw = mean + np.sqrt(var) * rng.standard_normal(mean.shape[0])
    return replace(state, stratum_mean=draw)


def update_coefs(state: ModelState, priors: PriorConfig, rng: np.random.Generator) -> ModelState:
    """Draw both coefficient vectors from their multivariate normal conditionals.

    Sampling goes through the Cholesky factor of the posterior precision, so
    a failed factorization (impossible with the prior ridge unless inputs are
    degenerate) is fatal.
    """
    cells = state.model.cells
    p = state.model.n_coef
    new = state.coef.copy()
    for u in (1, 2):
        mask = cells.stratum_urbanicity == u
        x = state.model.design[cells.stratum_comuna[mask]]
        y = state.stratum_mean[mask]
        prec = x.T @ x / state.sd_stratum**2 + np.eye(p) / priors.beta_prior_sd**2
        try:
            lower = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as exc:
            raise SingularPosteriorCovariance(
                f"coefficient posterior precision for urbanicity {u} is not positive definite"
            ) from exc
        b = x.T @ y / state.sd_stratum**2
        mean = solve_triangular(lower.T, solve_triangular(lower, b, lower=True), lower=False)
        z = rng.standard_normal(p)
        new[u - 1] = mean + solve_triangular(lower.T, z, lower=False)
    return replace(state, coef=new)


def slice_update_sd(
    value: float,
    count: float,
    sum_sq: float,
    prior_scale: float,
    rng: np.random.Generator,
    width: float = 1.0,
    max_expand: int = 50,
) -> float:
    """One slice-sampling update of a standard deviation on the log scale.

    The target combines the half-normal prior, ``count`` normal likelihood
    terms with residual sum of squares ``sum_sq``, and the log-scale
    Jacobian.  Stepping-out starts from an interval of ``width`` and doubles
    the step on every expansion; exceeding ``max_expand`` expansions on
    either side aborts, since it indicates a pathological target.
    """

    def log_density(x: float) -> float:
        var = np.exp(2.0 * x)
        if sum_sq == 0.0:
            fit = 0.0
        elif var == 0.0:  # log-scale underflow far below any slice
            return -np.inf
        else:
            fit = sum_sq / (2.0 * var)
        return -var / (2.0 * prior_scale**2) - count * x - fit + x

    x0 = float(np.log(value))
    height = log_density(x0) - rng.standard_exponential()

    u = rng.random()
    left = x0 - width * u
    right = left + width
    step = width
    for _ in range(max_expand):
        if log_density(left) <= height:
            break
        left -= step
        step *= 2.0
    else:
        raise SliceNonConvergence("slice interval expansion exceeded the doubling cap")
    step = width
    for _ in range(max_expand):
        if log_density(right) <= height:
            break
        right += step
        step *= 2.0
    else:
        raise SliceNonConvergence("slice interval expansion exceeded the doubling cap")

    for _ in range(1000):
        x = left + rng.random() * (right - left)
        if log_density(x) > height:
            return max(float(np.exp(x)), SD_FLOOR)
        if x < x0:
            left = x
        else:
            right = x
    raise SliceNonConvergence("slice shrinkage failed to accept a point")


def update_scales(state: ModelState, priors: PriorConfig, rng: np.random.Generator) -> ModelState:
    """Slice-update the three SDs (household, PSU, stratum level, in order)."""
    cells = state.model.cells
    resid_h = cells.t_income - state.psu_mean[cells.hh_cell]
    sd_h = slice_update_sd(
        state.sd_household, cells.n_households, float(resid_h @ resid_h), priors.sd_prior_scale, rng
    )
    resid_p = state.psu_mean - state.stratum_mean[cells.cell_stratum]
    sd_p = slice_update_sd(
        state.sd_psu, cells.n_cells, float(resid_p @ resid_p), priors.sd_prior_scale, rng
    )
    resid_s = state.stratum_mean - state.model.linear_predictor(state.coef)
    sd_s = slice_update_sd(
        state.sd_stratum, cells.n_strata, float(resid_s @ resid_s), priors.sd_prior_scale, rng
    )
    return replace(state, sd_household=sd_h, sd_psu=sd_p, sd_stratum=sd_s)


def sweep(state: ModelState, priors: PriorConfig, rng: np.random.Generator,
          sample_scales: bool = True) -> ModelState:
    """One full Gibbs sweep in the fixed order: PSU means, stratum means,
    coefficients, then scales."""
    state = update_psu_means(state, rng)
    state = update_stratum_means(state, rng)
    state = update_coefs(state, priors, rng)
    if sample_scales:
        state = update_scales(state, priors, rng)
    return state


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

@dataclass
class ChainDraws:
    """Retained draws of one chain, stacked along the first axis."""

    psu_mean: np.ndarray      # (R, n_cells)
    stratum_mean: np.ndarray  # (R, n_strata)
    coef: np.ndarray          # (R, 2, p)
    sds: np.ndarray           # (R, 3): household, psu, stratum

    @property
    def n_draws(self) -> int:
        return self.psu_mean.shape[0]


@dataclass
class DrawsStore:
    """Retained draws of every chain plus run metadata."""

    model: ModelIndex
    chains: list[ChainDraws]
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def draws_per_chain(self) -> int:
        return self.chains[0].n_draws if self.chains else 0

    @property
    def total_draws(self) -> int:
        return sum(c.n_draws for c in self.chains)

    def state_at(self, chain: int, draw: int) -> ModelState:
        c = self.chains[chain]
        return ModelState(
            model=self.model,
            psu_mean=c.psu_mean[draw],
            stratum_mean=c.stratum_mean[draw],
            coef=c.coef[draw],
            sd_household=float(c.sds[draw, 0]),
            sd_psu=float(c.sds[draw, 1]),
            sd_stratum=float(c.sds[draw, 2]),
        )


def run_chain(
    model: ModelIndex,
    priors: PriorConfig,
    settings: McmcSettings,
    seed,
    initial: ModelState | None = None,
) -> ChainDraws:
    """Run one chain: init, burn-in, then retain ``draws`` states (thinned).

    ``seed`` may be an int or a ``numpy.random.SeedSequence``; the result is
    a pure function of (model, priors, settings, seed).  ``initial`` replaces
    the deterministic starting state, which matters mostly for the
    fixed-variance sub-model where the SDs stay at their starting values.
    """
    rng = np.random.default_rng(seed)
    state = init_state(model, priors) if initial is None else initial
    r = settings.draws
    out = ChainDraws(
        psu_mean=np.empty((r, model.n_cells)),
        stratum_mean=np.empty((r, model.n_strata)),
        coef=np.empty((r, 2, model.n_coef)),
        sds=np.empty((r, 3)),
    )
    kept = 0
    total = settings.burn_in + settings.draws * settings.thin
    for s in range(1, total + 1):
        state = sweep(state, priors, rng, sample_scales=settings.sample_scales)
        if s > settings.burn_in and (s - settings.burn_in) % settings.thin == 0:
            out.psu_mean[kept] = state.psu_mean
            out.stratum_mean[kept] = state.stratum_mean
            out.coef[kept] = state.coef
            out.sds[kept] = (state.sd_household, state.sd_psu, state.sd_stratum)
            kept += 1
    return out


def _chain_job(args) -> ChainDraws:
    model, priors, settings, seed, initial = args
    return run_chain(model, priors, settings, seed, initial=initial)


def run_chains(
    model: ModelIndex,
    priors: PriorConfig,
    settings: McmcSettings,
    seed: int,
    initial: ModelState | None = None,
) -> DrawsStore:
    """Run ``settings.chains`` independent chains.

    Chain i is seeded with ``SeedSequence(seed).spawn(chains)[i]``, so the
    store contents do not depend on ``workers`` or on scheduling.
    """
    children = np.random.SeedSequence(seed).spawn(settings.chains)
    jobs = [(model, priors, settings, child, initial) for child in children]
    if settings.workers > 1 and settings.chains > 1:
        with ProcessPoolExecutor(max_workers=min(settings.workers, settings.chains)) as pool:
            chains = list(pool.map(_chain_job, jobs))
    else:
        chains = [_chain_job(job) for job in jobs]
    meta = {
        "seed": int(seed),
        "burn_in": settings.burn_in,
        "draws": settings.draws,
        "thin": settings.thin,
        "chains": settings.chains,
    }
    return DrawsStore(model=model, chains=chains, meta=meta)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def parameter_names(model: ModelIndex) -> list[str]:
    """Scalar parameter names, in the draws-file layout order."""
    names = [f"psu_mean[{c}|{u}|{p}]" for c, u, p in model.cells.keys]
    names += [f"stratum_mean[{c}|{u}]" for c, u in model.cells.stratum_keys]
    names += [f"coef[{u}|{j}]" for u in (1, 2) for j in range(model.n_coef)]
    names += ["sd_household", "sd_psu", "sd_stratum"]
    return names


def _flat_draws(chain: ChainDraws) -> np.ndarray:
    return np.concatenate(
        [
            chain.psu_mean,
            chain.stratum_mean,
            chain.coef.reshape(chain.n_draws, -1),
            chain.sds,
        ],
        axis=1,
    )


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction factor for one scalar.

    ``chains`` has shape (n_chains, n_iter).  Each chain is halved, W is the
    mean within-half variance, B/n the variance of half-means, and
    Rhat = sqrt((((n-1)/n) W + B/n) / W).  Zero within-variance yields NaN
    with a warning.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2:
        raise InsufficientDraws("expected a (chains, iterations) array")
    n = chains.shape[1] // 2
    if n < 2:
        raise InsufficientDraws("need at least 4 draws per chain for the split diagnostic")
    halves = np.concatenate([chains[:, :n], chains[:, n : 2 * n]], axis=0)
    within = float(np.mean(np.var(halves, axis=1, ddof=1)))
    between_over_n = float(np.var(np.mean(halves, axis=1), ddof=1))
    if within == 0.0:
        warnings.warn("zero within-chain variance; split-Rhat undefined", RuntimeWarning)
        return float("nan")
    return float(np.sqrt(((n - 1) / n * within + between_over_n) / within))


def psrf(draws: DrawsStore, monitored=None) -> dict[str, float]:
    """Split-Rhat for each monitored scalar (all parameters by default)."""
    names = parameter_names(draws.model)
    if monitored is not None:
        unknown = [m for m in monitored if m not in names]
        if unknown:
            raise KeyError(f"unknown parameters: {', '.join(unknown)}")
        wanted = list(monitored)
    else:
        wanted = names
    index = {name: j for j, name in enumerate(names)}
    stacked = np.stack([_flat_draws(c) for c in draws.chains])  # (chains, R, P)
    return {name: split_rhat(stacked[:, :, index[name]]) for name in wanted}


# ---------------------------------------------------------------------------
# draws file
# ---------------------------------------------------------------------------

def save_draws(store: DrawsStore, path) -> None:
    """Write the long-format draws CSV: chain,iter,param,value (17 digits)."""
    names = parameter_names(store.model)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("chain,iter,param,value\n")
        for ci, chain in enumerate(store.chains, start=1):
            flat = _flat_draws(chain)
            for it in range(flat.shape[0]):
                row = flat[it]
                fh.writelines(
                    f"{ci},{it + 1},{name},{row[j]:.17g}\n" for j, name in enumerate(names)
                )


def load_draws(path, model: ModelIndex, meta: dict | None = None) -> DrawsStore:
    """Rebuild a draws store from the long-format CSV for a matching model."""
    frame = pd.read_csv(path, float_precision="round_trip")
    for col in ("chain", "iter", "param", "value"):
        if col not in frame.columns:
            raise MissingColumn(f"draws file lacks column '{col}'")
    names = parameter_names(model)
    seen = set(frame["param"].unique())
    if seen != set(names):
        missing = sorted(set(names) - seen)
        extra = sorted(seen - set(names))
        parts = []
        if missing:
            parts.append(f"missing {len(missing)} parameters (e.g. {missing[0]})")
        if extra:
            parts.append(f"unexpected {len(extra)} parameters (e.g. {extra[0]})")
        raise RosterMismatch("draws file does not match the model roster: " + "; ".join(parts))
    n_cells = model.n_cells
    n_strata = model.n_strata
    p = model.n_coef
    chains = []
    for ci in sorted(frame["chain"].unique()):
        sub = frame[frame["chain"] == ci]
        wide = sub.pivot(index="iter", columns="param", values="value").sort_index()
        wide = wide.reindex(columns=names)
        flat = wide.to_numpy(dtype=float)
        r = flat.shape[0]
        chains.append(
            ChainDraws(
                psu_mean=flat[:, :n_cells].copy(),
                stratum_mean=flat[:, n_cells : n_cells + n_strata].copy(),
                coef=flat[:, n_cells + n_strata : n_cells + n_strata + 2 * p].reshape(r, 2, p).copy(),
                sds=flat[:, -3:].copy(),
            )
        )
    return DrawsStore(model=model, chains=chains, meta=dict(meta or {"source": str(path)}))

"""Synthetic finite populations, two-stage samples, and brute-force oracles.

The generator draws a full household universe from the same three-level
model the sampler fits, inverts the income transform, and exposes the exact
finite-population FGT values as ground truth.  ``draw_sample`` applies a
simplified equal-probability two-stage design whose inverse-inclusion
weights are what the estimators need.  ``mc_oracle_e_g`` is the Monte Carlo
check used against the closed-form conditional expectations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import HouseholdTable
from .errors import InfeasibleDesign, InvalidSizes, RuntimeFailure
from .fgt import PovertyLines

log = logging.getLogger(__name__)

# comuna i gets the strata listed at position i % len(pattern)
DEFAULT_STRATA_PATTERN = ((1, 2), (1,), (1, 2), (2,))

_MAX_REDRAW_ROUNDS = 10_000


def _default_coef(n_coef: int, intercept: float) -> np.ndarray:
    slopes = [0.3 * (-0.7) ** j for j in range(n_coef - 1)]
    return np.array([intercept] + slopes)


@dataclass(frozen=True)
class PopulationConfig:
    """Sizes and generative truth for a synthetic region."""

    n_comunas: int = 30
    psus_per_stratum: int = 6
    households_per_psu: int = 50
    n_covariates: int = 3
    sd_household: float = 0.8
    sd_psu: float = 0.25
    sd_stratum: float = 0.3
    coef_urban: np.ndarray | None = None
    coef_rural: np.ndarray | None = None
    covariates: np.ndarray | None = None  # (n_comunas, 1 + n_covariates) incl. intercept
    strata_pattern: tuple[tuple[int, ...], ...] = DEFAULT_STRATA_PATTERN

    def __post_init__(self):
        if self.n_comunas < 1 or self.psus_per_stratum < 1 or self.households_per_psu < 1:
            raise InvalidSizes("population sizes must be at least 1")
        if self.n_covariates < 0:
            raise InvalidSizes("the covariate count cannot be negative")
        for sd in (self.sd_household, self.sd_psu, self.sd_stratum):
            if not np.isfinite(sd) or sd <= 0:
                raise InvalidSizes("true standard deviations must be positive")
        for strata in self.strata_pattern:
            if not strata or any(u not in (1, 2) for u in strata):
                raise InvalidSizes("strata pattern entries must be non-empty subsets of {1, 2}")

    @property
    def n_coef(self) -> int:
        return 1 + self.n_covariates

    def coef(self, urbanicity: int) -> np.ndarray:
        given = self.coef_urban if urbanicity == 1 else self.coef_rural
        if given is not None:
            arr = np.asarray(given, dtype=float)
            if arr.shape != (self.n_coef,):
                raise InvalidSizes(f"coefficient vector must have length {self.n_coef}")
            return arr
        return _default_coef(self.n_coef, 2.4 if urbanicity == 1 else 2.1)


@dataclass(frozen=True)
class SampleDesign:
    """Two-stage SRS design; None means take every unit at that stage."""

    psus_per_stratum: int | None = 2
    households_per_psu: int | None = 10

    def __post_init__(self):
        for v in (self.psus_per_stratum, self.households_per_psu):
            if v is not None and v < 1:
                raise InfeasibleDesign("sampled counts must be at least 1")

    @classmethod
    def census(cls) -> "SampleDesign":
        return cls(psus_per_stratum=None, households_per_psu=None)


@dataclass
class SyntheticPopulation:
    """A fully instantiated household universe with its generative truth."""

    config: PopulationConfig
    seed: int
    comuna_ids: list[str]
    covariates: np.ndarray            # (C, p) incl. intercept
    stratum_comuna: np.ndarray
    stratum_urbanicity: np.ndarray
    stratum_mean_true: np.ndarray
    cell_stratum: np.ndarray
    cell_local_psu: np.ndarray        # PSU number within its stratum, 1-based
    psu_mean_true: np.ndarray
    hh_cell: np.ndarray
    income: np.ndarray
    t_income: np.ndarray
    redraw_count: int

    @property
    def n_households(self) -> int:
        return len(self.income)

    @property
    def n_cells(self) -> int:
        return len(self.cell_stratum)

    @property
    def hh_comuna(self) -> np.ndarray:
        return self.stratum_comuna[self.cell_stratum[self.hh_cell]]

    def covariate_frame(self) -> pd.DataFrame:
        """Raw covariate file content (identity transforms apply downstream)."""
        data = {"comuna_id": self.comuna_ids}
        for j in range(1, self.covariates.shape[1]):
            data[f"x{j}"] = self.covariates[:, j]
        return pd.DataFrame(data)

    def household_frame(self) -> pd.DataFrame:
        """The whole universe in the household CSV schema with weight 1."""
        cfg = self.config
        cells = self.cell_stratum[self.hh_cell]
        local_hh = np.arange(self.n_households) % cfg.households_per_psu
        return pd.DataFrame(
            {
                "comuna_id": [self.comuna_ids[c] for c in self.stratum_comuna[cells]],
                "urbanicity": self.stratum_urbanicity[cells],
                "psu_id": [f"p{j:03d}" for j in self.cell_local_psu[self.hh_cell]],
                "household_id": [f"h{j + 1:05d}" for j in local_hh],
                "income": self.income,
                "weight": np.ones(self.n_households),
            }
        )

    def truth_items(self) -> list[tuple[str, str]]:
        """Flat key/value pairs describing the generative truth."""
        cfg = self.config
        items = [
            ("population_seed", str(self.seed)),
            ("n_comunas", str(cfg.n_comunas)),
            ("psus_per_stratum", str(cfg.psus_per_stratum)),
            ("households_per_psu", str(cfg.households_per_psu)),
            ("sd_household", repr(cfg.sd_household)),
            ("sd_psu", repr(cfg.sd_psu)),
            ("sd_stratum", repr(cfg.sd_stratum)),
            ("redraw_count", str(self.redraw_count)),
        ]
        for u, label in ((1, "urban"), (2, "rural")):
            for j, b in enumerate(cfg.coef(u)):
                items.append((f"coef_{label}_{j}", repr(float(b))))
        return items


def generate_population(config: PopulationConfig, seed: int) -> SyntheticPopulation:
    """Draw a household universe from the three-level model.

    Transformed incomes that land below zero are redrawn (incomes must be
    nonnegative); the redraw count is kept and logged.  Deterministic given
    (config, seed).
    """
    rng = np.random.default_rng(seed)
    cfg = config
    comuna_ids = [f"c{i + 1:03d}" for i in range(cfg.n_comunas)]

    if cfg.covariates is not None:
        covariates = np.asarray(cfg.covariates, dtype=float)
        if covariates.shape != (cfg.n_comunas, cfg.n_coef):
            raise InvalidSizes(f"covariates must have shape ({cfg.n_comunas}, {cfg.n_coef})")
    else:
        covariates = np.column_stack(
            [np.ones(cfg.n_comunas), rng.standard_normal((cfg.n_comunas, cfg.n_covariates))]
        )

    stratum_comuna = []
    stratum_urbanicity = []
    for i in range(cfg.n_comunas):
        for u in cfg.strata_pattern[i % len(cfg.strata_pattern)]:
            stratum_comuna.append(i)
            stratum_urbanicity.append(u)
    stratum_comuna = np.array(stratum_comuna, dtype=np.intp)
    stratum_urbanicity = np.array(stratum_urbanicity, dtype=np.intp)
    n_strata = len(stratum_comuna)

    coef = np.stack([cfg.coef(1), cfg.coef(2)])
    eta = np.einsum("sp,sp->s", covariates[stratum_comuna], coef[stratum_urbanicity - 1])
    stratum_mean = eta + cfg.sd_stratum * rng.standard_normal(n_strata)

    n_cells = n_strata * cfg.psus_per_stratum
    cell_stratum = np.repeat(np.arange(n_strata), cfg.psus_per_stratum)
    cell_local_psu = np.tile(np.arange(1, cfg.psus_per_stratum + 1), n_strata)
    psu_mean = stratum_mean[cell_stratum] + cfg.sd_psu * rng.standard_normal(n_cells)

    n_households = n_cells * cfg.households_per_psu
    hh_cell = np.repeat(np.arange(n_cells), cfg.households_per_psu)
    t = psu_mean[hh_cell] + cfg.sd_household * rng.standard_normal(n_households)

    redraw_count = 0
    for _ in range(_MAX_REDRAW_ROUNDS):
        negative = t < 0
        n_neg = int(negative.sum())
        if n_neg == 0:
            break
        redraw_count += n_neg
        t[negative] = psu_mean[hh_cell[negative]] + cfg.sd_household * rng.standard_normal(n_neg)
    else:
        raise RuntimeFailure("income redraws did not terminate; the mean structure is too negative")
    if redraw_count:
        log.debug("redrew %d transformed incomes below zero", redraw_count)

    return SyntheticPopulation(
        config=cfg,
        seed=int(seed),
        comuna_ids=comuna_ids,
        covariates=covariates,
        stratum_comuna=stratum_comuna,
        stratum_urbanicity=stratum_urbanicity,
        stratum_mean_true=stratum_mean,
        cell_stratum=cell_stratum,
        cell_local_psu=cell_local_psu,
        psu_mean_true=psu_mean,
        hh_cell=hh_cell,
        income=np.expm1(t),
        t_income=t,
        redraw_count=redraw_count,
    )


def draw_sample(pop: SyntheticPopulation, design: SampleDesign, seed: int) -> HouseholdTable:
    """Two-stage sample: SRS of PSUs per stratum, then SRS of households.

    The raw weight of each sampled household is the product of inverse
    inclusion probabilities (M/m) * (N/n).  Deterministic given seed.
    """
    rng = np.random.default_rng(seed)
    cfg = pop.config
    m_pop = cfg.psus_per_stratum
    n_pop = cfg.households_per_psu
    m = m_pop if design.psus_per_stratum is None else design.psus_per_stratum
    n = n_pop if design.households_per_psu is None else design.households_per_psu
    if m > m_pop:
        raise InfeasibleDesign(f"asked for {m} PSUs per stratum but the population has {m_pop}")
    if n > n_pop:
        raise InfeasibleDesign(f"asked for {n} households per PSU but PSUs hold {n_pop}")
    weight = (m_pop / m) * (n_pop / n)

    rows: dict[str, list] = {k: [] for k in ("comuna_id", "urbanicity", "psu_id", "household_id", "income", "weight")}
    for s in range(len(pop.stratum_comuna)):
        comuna = pop.comuna_ids[pop.stratum_comuna[s]]
        urbanicity = int(pop.stratum_urbanicity[s])
        first_cell = s * m_pop
        chosen_cells = np.sort(rng.choice(m_pop, size=m, replace=False))
        for local in chosen_cells:
            cell = first_cell + local
            chosen_hh = np.sort(rng.choice(n_pop, size=n, replace=False))
            base = cell * n_pop
            for h in chosen_hh:
                rows["comuna_id"].append(comuna)
                rows["urbanicity"].append(urbanicity)
                rows["psu_id"].append(f"p{local + 1:03d}")
                rows["household_id"].append(f"h{h + 1:05d}")
                rows["income"].append(pop.income[base + h])
                rows["weight"].append(weight)
    return HouseholdTable.from_frame(pd.DataFrame(rows))


def true_fgt(pop: SyntheticPopulation, lines: PovertyLines, alpha) -> np.ndarray:
    """Exact finite-population FGT value per comuna, by full enumeration."""
    if np.ndim(alpha) != 0 or alpha < 0:
        raise InvalidSizes("alpha must be a scalar >= 0")
    line = lines.line_array(pop.stratum_urbanicity[pop.cell_stratum[pop.hh_cell]])
    poor = pop.income < line
    shortfall = np.where(poor, (line - pop.income) / line, 0.0)
    g = np.power(shortfall, float(alpha)) * poor
    comuna = pop.hh_comuna
    totals = np.bincount(comuna, weights=g, minlength=len(pop.comuna_ids))
    sizes = np.bincount(comuna, minlength=len(pop.comuna_ids))
    return totals / sizes


def mc_oracle_e_g(theta, sd, line, alpha, n_draws: int = 1_000_000, seed: int = 0):
    """Monte Carlo estimate (and its SE) of the conditional FGT expectation.

    Draws transformed incomes from N(theta, sd^2) and averages
    g_alpha(exp(t) - 1) over all draws, with the indicator 0 <= t < line_t
    handling the truncation.  Independent of the closed forms it checks.
    """
    if n_draws < 10_000:
        raise InvalidSizes("the Monte Carlo oracle needs at least 1e4 draws")
    rng = np.random.default_rng(seed)
    t = theta + sd * rng.standard_normal(n_draws)
    line_t = np.log1p(line)
    inside = (t >= 0.0) & (t < line_t)
    g = np.zeros(n_draws)
    base = np.clip((line - np.expm1(t[inside])) / line, 0.0, None)
    g[inside] = np.power(base, float(alpha))
    return float(g.mean()), float(g.std(ddof=1) / np.sqrt(n_draws))

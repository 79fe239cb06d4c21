"""FGT poverty-index machinery on the transformed income scale.

Given a PSU-level mean and the household SD of t = ln(income + 1), the
conditional expectation of the FGT kernel g_alpha has closed forms for the
headcount (alpha = 0) and the normalized gap (alpha = 1); other sensitivity
values go through Gauss-Legendre quadrature against the standard normal
density.  Weighted sums of those expectations over a survey's PSUs give the
per-comuna index values, and stacking them over retained MCMC draws yields
the Q-matrix, the reusable posterior artifact the decision layer consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy.special import ndtr, roots_legendre

from .data import HouseholdTable
from .errors import (
    EmptyDomain,
    NegativeAlpha,
    NonPositiveLine,
    NonPositiveSigma,
    RosterMismatch,
)

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_PANEL_WIDTH = 8.0  # z-units per quadrature panel; one panel on typical inputs


def _check_sigma(sd) -> None:
    if np.any(~np.isfinite(np.asarray(sd, dtype=float))) or np.any(np.asarray(sd) <= 0):
        raise NonPositiveSigma("the household-level SD must be positive and finite")


def _check_line(line) -> None:
    if np.any(~np.isfinite(np.asarray(line, dtype=float))) or np.any(np.asarray(line) <= 0):
        raise NonPositiveLine("poverty lines must be positive and finite")


def _scalar_out(value, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(value)
    return value


def normal_prob_between(lower, upper):
    """P(lower < Z <= upper) for standard normal Z, stable in both tails.

    When both endpoints are positive the difference is taken between
    complementary CDFs, avoiding the catastrophic cancellation of
    ndtr(upper) - ndtr(lower) ~ 1 - 1.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    upper_tail = ndtr(-lo) - ndtr(-hi)
    lower_tail = ndtr(hi) - ndtr(lo)
    out = np.clip(np.where(lo > 0.0, upper_tail, lower_tail), 0.0, 1.0)
    return _scalar_out(out, lower, upper)


def expected_headcount(theta, sd, line_t):
    """Conditional poverty-rate contribution of one PSU.

    Probability that a household's transformed income lands in [0, line_t)
    when it is normal with mean ``theta`` and SD ``sd``; ``line_t`` is the
    poverty line already on the transformed scale.  Result is in [0, 1].
    """
    _check_sigma(sd)
    _check_line(line_t)
    th = np.asarray(theta, dtype=float)
    out = normal_prob_between((0.0 - th) / sd, (np.asarray(line_t) - th) / sd)
    return _scalar_out(out, theta, sd, line_t)


def expected_gap(theta, sd, line):
    """Conditional normalized poverty-gap contribution of one PSU.

    ``line`` is the poverty line on the original income scale.  Uses the
    lognormal partial-expectation identity; both CDF differences are
    evaluated tail-stably and the exponential factors are combined in log
    space so large PSU means cannot overflow.  Clamped to
    [0, expected_headcount].
    """
    _check_sigma(sd)
    _check_line(line)
    th = np.asarray(theta, dtype=float)
    sd = np.asarray(sd, dtype=float)
    k = np.asarray(line, dtype=float)
    line_t = np.log1p(k)
    a = (0.0 - th) / sd
    b = (line_t - th) / sd
    p_in = normal_prob_between(a, b)
    p_shift = normal_prob_between(a - sd, b - sd)
    with np.errstate(divide="ignore"):
        term_line = np.exp(line_t + np.log(p_in) - np.log(k))
        term_mean = np.exp(th + 0.5 * sd * sd + np.log(p_shift) - np.log(k))
    out = np.clip(term_line - term_mean, 0.0, p_in)
    return _scalar_out(out, theta, sd, line)


@lru_cache(maxsize=8)
def _legendre(nodes: int):
    x, w = roots_legendre(nodes)
    return x, w


def expected_fgt_quadrature(theta, sd, line, alpha, nodes: int = 128):
    """Conditional FGT contribution for any alpha >= 0 by quadrature.

    Integrates g_alpha against the standard normal density over
    z in [-theta/sd, (line_t - theta)/sd], i.e. transformed incomes in
    [0, line_t).  A single ``nodes``-point Gauss-Legendre rule is used per
    panel; the range is split into extra panels only when it is wider than
    the rule can resolve (line_t / sd large).
    """
    if np.any(np.asarray(alpha) < 0):
        raise NegativeAlpha("the sensitivity parameter alpha must be >= 0")
    _check_sigma(sd)
    _check_line(line)
    if nodes < 2:
        raise ValueError("quadrature needs at least 2 nodes")
    th, sdv, k = np.broadcast_arrays(
        np.asarray(theta, dtype=float), np.asarray(sd, dtype=float), np.asarray(line, dtype=float)
    )
    line_t = np.log1p(k)
    lower = (0.0 - th) / sdv
    width = line_t / sdv
    panels = max(1, int(np.ceil(float(np.max(width)) / _PANEL_WIDTH)))
    x, w = _legendre(nodes)

    total = np.zeros(th.shape, dtype=float)
    for j in range(panels):
        left = lower + width * (j / panels)
        half = width / (2.0 * panels)
        mid = left + half
        z = mid[..., None] + half[..., None] * x  # (..., nodes)
        base = (np.exp(line_t[..., None]) - np.exp(sdv[..., None] * z + th[..., None])) / k[..., None]
        base = np.clip(base, 0.0, None)
        dens = np.exp(-0.5 * z * z) / _SQRT_2PI
        total += half * np.sum(w * np.power(base, alpha) * dens, axis=-1)
    out = np.clip(total, 0.0, 1.0)
    return _scalar_out(out, theta, sd, line)


def expected_fgt(theta, sd, line, alpha, nodes: int = 128):
    """Dispatch the conditional FGT contribution for a given alpha.

    Closed forms handle alpha = 0 and alpha = 1 exactly; every other
    nonnegative alpha is evaluated by ``expected_fgt_quadrature``.
    ``line`` is on the original income scale.
    """
    if np.ndim(alpha) != 0:
        raise NegativeAlpha("alpha must be a scalar")
    if alpha < 0:
        raise NegativeAlpha("the sensitivity parameter alpha must be >= 0")
    if alpha == 0:
        _check_line(line)
        return expected_headcount(theta, sd, np.log1p(np.asarray(line, dtype=float)))
    if alpha == 1:
        return expected_gap(theta, sd, line)
    return expected_fgt_quadrature(theta, sd, line, alpha, nodes=nodes)


# ---------------------------------------------------------------------------
# poverty lines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PovertyLines:
    """Urban and rural poverty lines on the original income scale."""

    urban: float
    rural: float

    def __post_init__(self):
        for value in (self.urban, self.rural):
            if not np.isfinite(value) or value <= 0:
                raise NonPositiveLine("poverty lines must be positive and finite")

    def line(self, urbanicity: int) -> float:
        if urbanicity == 1:
            return self.urban
        if urbanicity == 2:
            return self.rural
        raise ValueError(f"urbanicity must be 1 or 2, got {urbanicity}")

    def transformed(self, urbanicity: int) -> float:
        return float(np.log1p(self.line(urbanicity)))

    def line_array(self, urbanicity) -> np.ndarray:
        u = np.asarray(urbanicity)
        return np.where(u == 1, self.urban, self.rural).astype(float)


# ---------------------------------------------------------------------------
# survey-weighted aggregation and the Q-matrix
# ---------------------------------------------------------------------------

def _check_roster(state_keys, table: HouseholdTable) -> None:
    if tuple(state_keys) != table.cells.keys:
        raise RosterMismatch("model state was built for a different (comuna, urbanicity, PSU) roster")


def comuna_expected_fgt(state, table: HouseholdTable, lines: PovertyLines, alpha, nodes: int = 128) -> np.ndarray:
    """Per-comuna FGT value implied by one model state.

    The conditional expectation is constant across households of a PSU, so
    the triple sum over households collapses to the PSU scaled-weight masses:
    sum over PSUs of W_cup * E[g_alpha | psu mean, household SD].  Returns a
    vector aligned to ``table.comuna_ids``.
    """
    cells = table.cells
    _check_roster(state.model.cells.keys, table)
    k_cell = lines.line_array(cells.urbanicity)
    e = expected_fgt(state.psu_mean, state.sd_household, k_cell, alpha, nodes=nodes)
    values = np.bincount(
        cells.comuna_idx, weights=cells.weight_mass * np.asarray(e), minlength=table.n_comunas
    )
    return values


@dataclass
class QMatrix:
    """Posterior draws of per-comuna FGT values: rows comunas, columns draws."""

    values: np.ndarray
    comuna_ids: list[str]
    alpha: float
    provenance: dict = field(default_factory=dict)

    @property
    def n_comunas(self) -> int:
        return self.values.shape[0]

    @property
    def n_draws(self) -> int:
        return self.values.shape[1]

    def row(self, comuna_id: str) -> np.ndarray:
        return self.values[self.comuna_ids.index(comuna_id)]


def build_q_matrix(draws, table: HouseholdTable, lines: PovertyLines, alpha, nodes: int = 128,
                   chunk: int = 256) -> QMatrix:
    """Evaluate the per-comuna FGT vector at every retained draw.

    Column r holds the vector for the r-th retained state, with chains
    concatenated in chain order, so the layout is deterministic for a given
    draws store.
    """
    cells = table.cells
    _check_roster(draws.model.cells.keys, table)
    k_cell = lines.line_array(cells.urbanicity)
    mass = np.zeros((table.n_comunas, cells.n_cells))
    mass[cells.comuna_idx, np.arange(cells.n_cells)] = cells.weight_mass

    blocks = []
    for chain in draws.chains:
        theta = chain.psu_mean
        sd_h = chain.sds[:, 0]
        for start in range(0, theta.shape[0], chunk):
            th = theta[start : start + chunk]
            sd = sd_h[start : start + chunk, None]
            e = expected_fgt(th, sd, k_cell[None, :], alpha, nodes=nodes)
            blocks.append(np.asarray(e) @ mass.T)
    values = np.concatenate(blocks, axis=0).T
    provenance = dict(draws.meta)
    provenance["alpha"] = float(alpha)
    return QMatrix(values=values, comuna_ids=list(table.comuna_ids), alpha=float(alpha), provenance=provenance)


def save_q_matrix(q: QMatrix, path) -> None:
    """Write the Q-matrix CSV: comuna_id, then one column per retained draw."""
    digits = max(4, len(str(q.n_draws)))
    header = ["comuna_id"] + [f"draw_{r + 1:0{digits}d}" for r in range(q.n_draws)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i, cid in enumerate(q.comuna_ids):
            row = ",".join(repr(float(v)) for v in q.values[i])
            fh.write(f"{cid},{row}\n")


def load_q_matrix(path, alpha: float) -> QMatrix:
    frame = pd.read_csv(path, dtype={"comuna_id": str}, float_precision="round_trip")
    comuna_ids = list(frame["comuna_id"])
    values = frame.drop(columns=["comuna_id"]).to_numpy(dtype=float)
    return QMatrix(values=values, comuna_ids=comuna_ids, alpha=float(alpha),
                   provenance={"source": str(path)})


# ---------------------------------------------------------------------------
# design-based direct estimates
# ---------------------------------------------------------------------------

def _fgt_kernel(income: np.ndarray, line: np.ndarray, alpha: float) -> np.ndarray:
    poor = income < line
    shortfall = np.where(poor, (line - income) / line, 0.0)
    return np.power(shortfall, alpha) * poor


def direct_estimate(table: HouseholdTable, lines: PovertyLines, alpha, comunas=None) -> float:
    """Hajek-ratio direct estimate of the FGT index over a domain.

    Uses raw survey weights on the original income scale.  ``comunas`` picks
    a sub-domain; None means the whole region in the table.
    """
    if np.ndim(alpha) != 0 or alpha < 0:
        raise NegativeAlpha("the sensitivity parameter alpha must be a scalar >= 0")
    cells = table.cells
    if comunas is None:
        mask = np.ones(cells.n_households, dtype=bool)
    else:
        wanted = {str(c) for c in comunas}
        keep = np.array([cid in wanted for cid in table.comuna_ids])
        mask = keep[cells.hh_comuna]
    if not mask.any():
        raise EmptyDomain("no households in the requested domain")
    line = lines.line_array(cells.urbanicity[cells.hh_cell[mask]])
    g = _fgt_kernel(cells.income[mask], line, float(alpha))
    w = cells.weight_raw[mask]
    return float(np.sum(w * g) / np.sum(w))


def direct_estimates_by_comuna(table: HouseholdTable, lines: PovertyLines, alpha) -> np.ndarray:
    """Per-comuna Hajek direct estimates, aligned to ``table.comuna_ids``."""
    if np.ndim(alpha) != 0 or alpha < 0:
        raise NegativeAlpha("the sensitivity parameter alpha must be a scalar >= 0")
    cells = table.cells
    line = lines.line_array(cells.urbanicity[cells.hh_cell])
    g = _fgt_kernel(cells.income, line, float(alpha))
    num = np.bincount(cells.hh_comuna, weights=cells.weight_raw * g, minlength=table.n_comunas)
    den = np.bincount(cells.hh_comuna, weights=cells.weight_raw, minlength=table.n_comunas)
    return num / den

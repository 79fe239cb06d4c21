"""Posterior decision layer over a Q-matrix.

Answers the three inferential questions the Q-matrix exists for: point
estimates with uncertainty, exceedance flagging against policy thresholds,
and identification of the worst/best comuna with posterior rank
probabilities as the quality measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CutoffOutOfRange,
    NonPositiveRegionalEstimate,
    SingleComuna,
    TooFewDraws,
)
from .fgt import QMatrix

DEFAULT_MULTIPLIERS = (1.10, 1.25, 1.50)
DEFAULT_CUTOFF = 0.5


def point_estimates(q: QMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise posterior mean and SD (sample SD, denominator R-1)."""
    if q.n_draws < 2:
        raise TooFewDraws("need at least 2 draws for a posterior SD")
    return q.values.mean(axis=1), q.values.std(axis=1, ddof=1)


def exceedance_probabilities(q: QMatrix, thresholds) -> np.ndarray:
    """P(index > threshold) per comuna: the share of draws strictly above.

    Returns an array of shape (n_comunas, n_thresholds) with thresholds in
    the given order.
    """
    thr = np.asarray(thresholds, dtype=float)
    if thr.ndim != 1 or not np.all(np.isfinite(thr)):
        raise ValueError("thresholds must be a flat list of finite numbers")
    counts = (q.values[:, :, None] > thr[None, None, :]).sum(axis=1)
    return counts / q.n_draws


def make_thresholds(regional_direct: float, multipliers=DEFAULT_MULTIPLIERS) -> list[float]:
    """Absolute thresholds: multipliers times the regional direct estimate."""
    if not np.isfinite(regional_direct) or regional_direct <= 0:
        raise NonPositiveRegionalEstimate(
            f"the regional direct estimate must be positive, got {regional_direct}"
        )
    mult = np.asarray(multipliers, dtype=float)
    if mult.size == 0 or np.any(~np.isfinite(mult) | (mult <= 0)):
        raise ValueError("threshold multipliers must be positive numbers")
    return sorted(float(m) * float(regional_direct) for m in mult)


def flag(probabilities, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """Flag entries whose exceedance probability is strictly above the cutoff."""
    if not (0.0 < cutoff < 1.0):
        raise CutoffOutOfRange(f"cutoff must be inside (0, 1), got {cutoff}")
    return np.asarray(probabilities, dtype=float) > cutoff


def extreme_probabilities(q: QMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Posterior probabilities of being the worst and the best comuna.

    Each draw column elects exactly one maximizer and one minimizer (ties go
    to the smallest row index), so both probability vectors sum to one.
    """
    if q.n_comunas < 2:
        raise SingleComuna("extreme-area identification needs at least 2 comunas")
    hi = np.argmax(q.values, axis=0)
    lo = np.argmin(q.values, axis=0)
    prob_max = np.bincount(hi, minlength=q.n_comunas) / q.n_draws
    prob_min = np.bincount(lo, minlength=q.n_comunas) / q.n_draws
    return prob_max, prob_min


@dataclass
class DecisionReport:
    """Everything the reporting layer needs for one alpha."""

    comuna_ids: list[str]
    alpha: float
    regional_direct: float
    multipliers: list[float]
    thresholds: list[float]
    cutoff: float
    mean: np.ndarray
    sd: np.ndarray
    exceedance: np.ndarray  # (C, T)
    flags: np.ndarray       # (C, T) bool
    prob_max: np.ndarray
    prob_min: np.ndarray

    @property
    def worst(self) -> tuple[str, float]:
        i = int(np.argmax(self.prob_max))
        return self.comuna_ids[i], float(self.prob_max[i])

    @property
    def best(self) -> tuple[str, float]:
        i = int(np.argmax(self.prob_min))
        return self.comuna_ids[i], float(self.prob_min[i])

    def display_order(self) -> np.ndarray:
        """Row order for tables: descending first-threshold exceedance."""
        return np.argsort(-self.exceedance[:, 0], kind="stable")


def build_report(
    q: QMatrix,
    regional_direct: float,
    multipliers=DEFAULT_MULTIPLIERS,
    cutoff: float = DEFAULT_CUTOFF,
) -> DecisionReport:
    thresholds = make_thresholds(regional_direct, multipliers)
    mean, sd = point_estimates(q)
    probs = exceedance_probabilities(q, thresholds)
    flags = flag(probs, cutoff)
    prob_max, prob_min = extreme_probabilities(q)
    return DecisionReport(
        comuna_ids=list(q.comuna_ids),
        alpha=float(q.alpha),
        regional_direct=float(regional_direct),
        multipliers=[float(m) for m in multipliers],
        thresholds=thresholds,
        cutoff=float(cutoff),
        mean=mean,
        sd=sd,
        exceedance=probs,
        flags=flags,
        prob_max=prob_max,
        prob_min=prob_min,
    )


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_point_csv(report: DecisionReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("comuna_id,posterior_mean,posterior_sd\n")
        for i, cid in enumerate(report.comuna_ids):
            fh.write(f"{cid},{_fmt(report.mean[i])},{_fmt(report.sd[i])}\n")


def write_flags_csv(report: DecisionReport, path) -> None:
    """Exceedance table sorted by descending first-threshold probability."""
    n_thr = len(report.thresholds)
    cols = [f"p_gt_t{j + 1}" for j in range(n_thr)] + [f"flag_t{j + 1}" for j in range(n_thr)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("comuna_id," + ",".join(cols) + "\n")
        for i in report.display_order():
            probs = ",".join(_fmt(v) for v in report.exceedance[i])
            flags = ",".join("1" if v else "0" for v in report.flags[i])
            fh.write(f"{report.comuna_ids[i]},{probs},{flags}\n")


def write_extremes_csv(report: DecisionReport, path) -> None:
    """Rank-probability table sorted like the worst-to-best league table."""
    order = np.lexsort((report.prob_min, -report.prob_max))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("comuna_id,prob_max,prob_min\n")
        for i in order:
            fh.write(
                f"{report.comuna_ids[i]},{_fmt(report.prob_max[i])},{_fmt(report.prob_min[i])}\n"
            )

"""Shared fixtures-by-hand for the test suite."""

from __future__ import annotations

import numpy as np
import pandas as pd

from povmap import data

HH_COLUMNS = ["comuna_id", "urbanicity", "psu_id", "household_id", "income", "weight"]


def make_table(rows) -> data.HouseholdTable:
    """Build a validated table from (comuna, urb, psu, hh, income, weight) tuples."""
    return data.HouseholdTable.from_frame(pd.DataFrame(rows, columns=HH_COLUMNS))


def table_from_t(groups, weight: float = 1.0) -> data.HouseholdTable:
    """Build a table from {(comuna, urb, psu): [t values]} on the transformed scale."""
    rows = []
    for (comuna, urb, psu), t_values in groups.items():
        for h, t in enumerate(t_values):
            rows.append((comuna, urb, psu, f"h{h}", float(np.expm1(t)), weight))
    return make_table(rows)


def identity_covariates(comuna_ids, values) -> data.CovariateTable:
    """Covariate table with an explicit design matrix (intercept already included)."""
    matrix = np.asarray(values, dtype=float)
    names = ["intercept"] + [f"x{j}" for j in range(1, matrix.shape[1])]
    return data.CovariateTable(comuna_ids=list(comuna_ids), names=names, matrix=matrix)


def batch_mean_se(draws: np.ndarray, n_batches: int = 32) -> tuple[float, float]:
    """Mean and batch-means standard error for autocorrelated scalar draws."""
    draws = np.asarray(draws, dtype=float)
    usable = (len(draws) // n_batches) * n_batches
    batches = draws[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(draws.mean()), float(batches.std(ddof=1) / np.sqrt(n_batches))

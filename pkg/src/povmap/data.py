"""Ingestion, validation, and model-scale transforms for survey inputs.

Household records carry per-capita income and a design weight.  The model
works on the transformed income t = ln(income + 1) and on weights rescaled so
that each comuna's weights sum to one.  Comuna-level covariates get a
per-column transform (log for wage-like columns, arcsin-sqrt for proportions)
and are then z-scored so that unit-scale coefficient priors are weakly
informative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ConfigError,
    DuplicateHousehold,
    MissingColumn,
    NegativeIncome,
    NonFiniteInput,
    NonPositiveWage,
    NonPositiveWeight,
    PercentOutOfRange,
    RosterMismatch,
    UrbanicityOutOfRange,
    ZeroVarianceColumn,
)

REQUIRED_COLUMNS = ("comuna_id", "urbanicity", "psu_id", "household_id", "income", "weight")
KEY_COLUMNS = ("comuna_id", "urbanicity", "psu_id", "household_id")
COVARIATE_TRANSFORMS = ("log", "arcsin_sqrt", "identity")

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class ValidationIssue:
    """One problem found in an input file; ``row`` is the 0-based data row."""

    kind: str
    message: str
    row: int | None = None

    def as_dict(self) -> dict:
        out = {"kind": self.kind, "message": self.message}
        if self.row is not None:
            out["row"] = self.row
        return out


_ISSUE_EXCEPTIONS = {
    "missing_column": MissingColumn,
    "negative_income": NegativeIncome,
    "non_finite_income": NonFiniteInput,
    "non_positive_weight": NonPositiveWeight,
    "urbanicity_out_of_range": UrbanicityOutOfRange,
    "duplicate_household": DuplicateHousehold,
}


def raise_issue(issue: ValidationIssue) -> None:
    exc = _ISSUE_EXCEPTIONS.get(issue.kind, NonFiniteInput)
    if issue.row is None:
        raise exc(issue.message)
    raise exc(issue.message, row=issue.row)


# ---------------------------------------------------------------------------
# scalar transforms
# ---------------------------------------------------------------------------

def transform_income(income):
    """Map income y >= 0 to the model scale t = ln(y + 1).

    Accepts a scalar or array.  The inverse is ``inverse_transform_income``.
    """
    values = np.asarray(income, dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput("income values must be finite")
    if np.any(values < 0):
        raise NegativeIncome("income values must be >= 0")
    out = np.log1p(values)
    return float(out) if np.isscalar(income) or np.ndim(income) == 0 else out


def inverse_transform_income(t):
    """Invert the income transform: y = exp(t) - 1."""
    out = np.expm1(np.asarray(t, dtype=float))
    return float(out) if np.ndim(t) == 0 else out


def arcsin_sqrt(values):
    """Arcsin square-root transform for proportions in [0, 1]."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NonFiniteInput("proportions must be finite")
    if np.any((v < 0.0) | (v > 1.0)):
        raise PercentOutOfRange(
            "proportions must lie in [0, 1]; inputs on a 0-100 scale are rejected"
        )
    out = np.arcsin(np.sqrt(v))
    return float(out) if np.ndim(values) == 0 else out


# ---------------------------------------------------------------------------
# household table
# ---------------------------------------------------------------------------

def validate_household_frame(frame: pd.DataFrame) -> list[ValidationIssue]:
    """Collect every validation problem in a raw household frame.

    Returns an empty list when the frame is clean.  Row numbers are 0-based
    positions among the data rows (header excluded).
    """
    issues: list[ValidationIssue] = []
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    for name in missing:
        issues.append(ValidationIssue("missing_column", f"required column '{name}' is missing"))
    if missing:
        return issues

    income = pd.to_numeric(frame["income"], errors="coerce").to_numpy(dtype=float)
    weight = pd.to_numeric(frame["weight"], errors="coerce").to_numpy(dtype=float)
    urb = pd.to_numeric(frame["urbanicity"], errors="coerce").to_numpy(dtype=float)

    for row in np.flatnonzero(~np.isfinite(income)):
        issues.append(ValidationIssue("non_finite_income", f"income is not finite at row {row}", int(row)))
    for row in np.flatnonzero(np.isfinite(income) & (income < 0)):
        issues.append(ValidationIssue("negative_income", f"income is negative at row {row}", int(row)))
    bad_weight = ~np.isfinite(weight) | (weight <= 0)
    for row in np.flatnonzero(bad_weight):
        issues.append(ValidationIssue("non_positive_weight", f"weight must be > 0 at row {row}", int(row)))
    bad_urb = ~np.isfinite(urb) | (urb != np.floor(urb)) | ~np.isin(urb, (1.0, 2.0))
    for row in np.flatnonzero(bad_urb):
        issues.append(
            ValidationIssue("urbanicity_out_of_range", f"urbanicity must be 1 or 2 at row {row}", int(row))
        )

    dup = frame.duplicated(subset=list(KEY_COLUMNS), keep="first").to_numpy()
    for row in np.flatnonzero(dup):
        key = tuple(frame.iloc[row][list(KEY_COLUMNS)])
        issues.append(
            ValidationIssue("duplicate_household", f"duplicate household key {key} at row {row}", int(row))
        )
    issues.sort(key=lambda i: (i.row if i.row is not None else -1))
    return issues


@dataclass(frozen=True)
class CellTable:
    """Canonical (comuna, urbanicity, PSU) grouping of a household table.

    Cells are ordered by comuna first appearance, then urbanicity, then PSU
    first appearance; strata are the distinct (comuna, urbanicity) pairs in
    the same order.  Row-aligned arrays (``hh_cell``, ``t_income``,
    ``income``, ``weight_raw``) follow the input row order.
    """

    keys: tuple[tuple[str, int, str], ...]
    comuna_idx: np.ndarray
    urbanicity: np.ndarray
    count: np.ndarray
    t_sum: np.ndarray
    weight_mass: np.ndarray
    cell_stratum: np.ndarray
    stratum_keys: tuple[tuple[str, int], ...]
    stratum_comuna: np.ndarray
    stratum_urbanicity: np.ndarray
    stratum_cell_count: np.ndarray
    hh_cell: np.ndarray
    hh_comuna: np.ndarray
    t_income: np.ndarray
    income: np.ndarray
    weight_raw: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.keys)

    @property
    def n_strata(self) -> int:
        return len(self.stratum_keys)

    @property
    def n_households(self) -> int:
        return len(self.hh_cell)


@dataclass
class HouseholdTable:
    """Validated household records plus the comuna roster.

    ``frame`` keeps the input row order and carries the derived columns
    ``t_income`` (= ln(income+1)) and ``weight_scaled`` (weights normalized
    to sum to one within each comuna).
    """

    frame: pd.DataFrame
    comuna_ids: list[str]

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "HouseholdTable":
        issues = validate_household_frame(frame)
        if issues:
            raise_issue(issues[0])
        df = frame.loc[:, list(REQUIRED_COLUMNS)].reset_index(drop=True).copy()
        df["comuna_id"] = df["comuna_id"].astype(str)
        df["psu_id"] = df["psu_id"].astype(str)
        df["household_id"] = df["household_id"].astype(str)
        df["urbanicity"] = df["urbanicity"].astype(int)
        df["income"] = df["income"].astype(float)
        df = df.rename(columns={"weight": "weight_raw"})
        df["weight_raw"] = df["weight_raw"].astype(float)
        df["t_income"] = np.log1p(df["income"].to_numpy())
        table = cls(frame=df, comuna_ids=list(pd.unique(df["comuna_id"])))
        return scale_weights(table)

    @property
    def n_households(self) -> int:
        return len(self.frame)

    @property
    def n_comunas(self) -> int:
        return len(self.comuna_ids)

    @cached_property
    def cells(self) -> CellTable:
        df = self.frame.reset_index(drop=True)
        pos = np.arange(len(df))
        agg = (
            df.assign(_pos=pos)
            .groupby(["comuna_id", "urbanicity", "psu_id"], sort=False)
            .agg(
                count=("income", "size"),
                t_sum=("t_income", "sum"),
                weight_mass=("weight_scaled", "sum"),
                first_pos=("_pos", "min"),
            )
            .reset_index()
        )
        order = {cid: i for i, cid in enumerate(self.comuna_ids)}
        agg["_comuna_order"] = agg["comuna_id"].map(order)
        agg = agg.sort_values(
            ["_comuna_order", "urbanicity", "first_pos"], kind="stable"
        ).reset_index(drop=True)

        keys = tuple(zip(agg["comuna_id"], agg["urbanicity"].astype(int), agg["psu_id"]))
        comuna_idx = agg["_comuna_order"].to_numpy(dtype=np.intp)
        urbanicity = agg["urbanicity"].to_numpy(dtype=np.intp)

        stratum_keys: list[tuple[str, int]] = []
        stratum_of: dict[tuple[str, int], int] = {}
        cell_stratum = np.empty(len(keys), dtype=np.intp)
        for j, (cid, u, _) in enumerate(keys):
            sk = (cid, u)
            if sk not in stratum_of:
                stratum_of[sk] = len(stratum_keys)
                stratum_keys.append(sk)
            cell_stratum[j] = stratum_of[sk]
        stratum_comuna = np.array([order[c] for c, _ in stratum_keys], dtype=np.intp)
        stratum_urbanicity = np.array([u for _, u in stratum_keys], dtype=np.intp)
        stratum_cell_count = np.bincount(cell_stratum, minlength=len(stratum_keys))

        lookup = {k: j for j, k in enumerate(keys)}
        hh_cell = np.array(
            [
                lookup[(c, u, p)]
                for c, u, p in zip(df["comuna_id"], df["urbanicity"], df["psu_id"])
            ],
            dtype=np.intp,
        )
        return CellTable(
            keys=keys,
            comuna_idx=comuna_idx,
            urbanicity=urbanicity,
            count=agg["count"].to_numpy(dtype=np.intp),
            t_sum=agg["t_sum"].to_numpy(dtype=float),
            weight_mass=agg["weight_mass"].to_numpy(dtype=float),
            cell_stratum=cell_stratum,
            stratum_keys=tuple(stratum_keys),
            stratum_comuna=stratum_comuna,
            stratum_urbanicity=stratum_urbanicity,
            stratum_cell_count=stratum_cell_count,
            hh_cell=hh_cell,
            hh_comuna=comuna_idx[hh_cell],
            t_income=df["t_income"].to_numpy(dtype=float),
            income=df["income"].to_numpy(dtype=float),
            weight_raw=df["weight_raw"].to_numpy(dtype=float),
        )


def scale_weights(table: HouseholdTable) -> HouseholdTable:
    """Normalize raw weights to sum to one within each comuna.

    Raw weights are retained (direct estimators use them); the function is
    idempotent because the scaled column is always recomputed from the raw
    one.
    """
    df = table.frame
    raw = df["weight_raw"].to_numpy(dtype=float)
    if np.any(~np.isfinite(raw) | (raw <= 0)):
        raise NonPositiveWeight("weights must be > 0 and finite")
    totals = df.groupby("comuna_id", sort=False)["weight_raw"].transform("sum").to_numpy()
    out = df.copy()
    out["weight_scaled"] = raw / totals
    return HouseholdTable(frame=out, comuna_ids=list(table.comuna_ids))


def load_households(path) -> HouseholdTable:
    """Load and validate a household CSV.

    Expected header: comuna_id,urbanicity,psu_id,household_id,income,weight.
    Raises the typed error for the first problem found; ``validate_household_frame``
    reports all of them.
    """
    frame = pd.read_csv(
        path,
        dtype={"comuna_id": str, "psu_id": str, "household_id": str},
        float_precision="round_trip",
    )
    return HouseholdTable.from_frame(frame)


def save_households(table: HouseholdTable, path) -> None:
    """Write a table back to the canonical CSV schema (17 significant digits)."""
    df = table.frame.loc[:, ["comuna_id", "urbanicity", "psu_id", "household_id", "income", "weight_raw"]]
    df = df.rename(columns={"weight_raw": "weight"})
    df.to_csv(path, index=False, float_format=_FLOAT_FMT, lineterminator="\n")


# ---------------------------------------------------------------------------
# covariates
# ---------------------------------------------------------------------------

@dataclass
class CovariateTable:
    """Per-comuna design rows: leading intercept plus z-scored covariates."""

    comuna_ids: list[str]
    names: list[str]
    matrix: np.ndarray
    transforms: dict[str, str] = field(default_factory=dict)

    @property
    def n_coef(self) -> int:
        return self.matrix.shape[1]

    def design_for(self, comuna_ids: Sequence[str]) -> np.ndarray:
        """Rows aligned to ``comuna_ids``; RosterMismatch when any is absent."""
        index = {cid: i for i, cid in enumerate(self.comuna_ids)}
        missing = [cid for cid in comuna_ids if cid not in index]
        if missing:
            raise RosterMismatch(f"no covariate row for comunas: {', '.join(missing)}")
        rows = [index[cid] for cid in comuna_ids]
        return self.matrix[rows]


def transform_covariates(raw: pd.DataFrame, transforms: Mapping[str, str]) -> CovariateTable:
    """Apply per-column transforms, z-score, and prepend the intercept.

    ``transforms`` maps column name -> 'log' | 'arcsin_sqrt' | 'identity';
    unlisted columns default to 'identity'.  Standardization uses the sample
    mean and sample SD (ddof=1) across comunas.
    """
    if "comuna_id" not in raw.columns:
        raise MissingColumn("covariate file must have a 'comuna_id' column")
    comuna_ids = [str(c) for c in raw["comuna_id"]]
    if len(set(comuna_ids)) != len(comuna_ids):
        raise RosterMismatch("duplicate comuna_id rows in the covariate file")
    for name in transforms:
        if name not in raw.columns:
            raise MissingColumn(f"transform given for unknown covariate column '{name}'")

    value_cols = [c for c in raw.columns if c != "comuna_id"]
    columns = [np.ones(len(comuna_ids))]
    names = ["intercept"]
    applied: dict[str, str] = {}
    for name in value_cols:
        tag = transforms.get(name, "identity")
        if tag not in COVARIATE_TRANSFORMS:
            raise ConfigError(f"unknown transform '{tag}' for column '{name}'")
        v = pd.to_numeric(raw[name], errors="coerce").to_numpy(dtype=float)
        if not np.all(np.isfinite(v)):
            raise NonFiniteInput(f"covariate column '{name}' has non-finite values")
        if tag == "log":
            if np.any(v <= 0):
                raise NonPositiveWage(f"log transform needs positive values in column '{name}'")
            v = np.log(v)
        elif tag == "arcsin_sqrt":
            if np.any((v < 0) | (v > 1)):
                raise PercentOutOfRange(
                    f"column '{name}' must hold proportions in [0, 1] for arcsin_sqrt"
                )
            v = np.arcsin(np.sqrt(v))
        mean = v.mean()
        sd = v.std(ddof=1) if len(v) > 1 else 0.0
        if not np.isfinite(sd) or sd <= 0:
            raise ZeroVarianceColumn(f"covariate column '{name}' cannot be standardized")
        columns.append((v - mean) / sd)
        names.append(name)
        applied[name] = tag
    matrix = np.column_stack(columns)
    return CovariateTable(comuna_ids=comuna_ids, names=names, matrix=matrix, transforms=applied)


def load_covariates(path, transforms: Mapping[str, str]) -> CovariateTable:
    raw = pd.read_csv(path, dtype={"comuna_id": str}, float_precision="round_trip")
    return transform_covariates(raw, transforms)

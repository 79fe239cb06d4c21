from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from helpers import HH_COLUMNS, make_table
from povmap import data
from povmap.errors import (
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

# float of mpmath.log(101) at 40 digits
LN_101 = 4.615120516841259


def test_scale_weights_three_households():
    table = make_table(
        [("a", 1, "p1", "h1", 10.0, 2.0), ("a", 1, "p1", "h2", 20.0, 3.0), ("a", 1, "p2", "h3", 5.0, 5.0)]
    )
    assert table.frame["weight_scaled"].tolist() == [0.2, 0.3, 0.5]


def test_scale_weights_singleton_comunas():
    table = make_table([("a", 1, "p1", "h1", 10.0, 7.0), ("b", 2, "p1", "h1", 3.0, 7.0)])
    assert table.frame["weight_scaled"].tolist() == [1.0, 1.0]


def test_scale_weights_equal_weights():
    table = make_table([("a", 1, "p1", f"h{i}", 1.0, 1.0) for i in range(4)])
    assert table.frame["weight_scaled"].tolist() == [0.25] * 4


def test_scaled_weights_sum_to_one_per_comuna(rng):
    rows = []
    for c in ("a", "b", "c"):
        for i in range(17):
            rows.append((c, 1 + i % 2, f"p{i % 3}", f"h{i}", float(rng.uniform(0, 50)), float(rng.uniform(0.5, 9))))
    table = make_table(rows)
    sums = table.frame.groupby("comuna_id")["weight_scaled"].sum()
    assert np.all(np.abs(sums.to_numpy() - 1.0) <= 1e-12)


def test_scale_weights_idempotent():
    table = make_table([("a", 1, "p1", "h1", 1.0, 2.0), ("a", 1, "p1", "h2", 2.0, 6.0)])
    again = data.scale_weights(table)
    assert again.frame["weight_scaled"].tolist() == table.frame["weight_scaled"].tolist()


def test_scale_weights_rejects_nonpositive():
    table = make_table([("a", 1, "p1", "h1", 1.0, 2.0)])
    table.frame.loc[0, "weight_raw"] = 0.0
    with pytest.raises(NonPositiveWeight):
        data.scale_weights(table)


# -- income transform ---------------------------------------------------------

def test_transform_income_zero():
    assert data.transform_income(0.0) == 0.0


def test_transform_income_inverse_of_exp():
    assert data.transform_income(math.e - 1.0) == pytest.approx(1.0, rel=1e-15)


def test_transform_income_high_precision_reference():
    assert data.transform_income(100.0) == pytest.approx(LN_101, rel=1e-15)


def test_transform_income_round_trip():
    y = np.concatenate([[0.0], np.logspace(-6, 9, 200)])
    back = data.inverse_transform_income(data.transform_income(y))
    err = np.abs(back - y) / np.maximum(y, 1.0)
    assert np.all(err <= 1e-12)


def test_transform_income_errors():
    with pytest.raises(NegativeIncome):
        data.transform_income(-0.5)
    with pytest.raises(NonFiniteInput):
        data.transform_income(float("nan"))
    with pytest.raises(NonFiniteInput):
        data.transform_income(float("inf"))


# -- covariate transforms -----------------------------------------------------

def test_arcsin_sqrt_quarter():
    assert data.arcsin_sqrt(0.25) == pytest.approx(math.pi / 6, rel=1e-15)


def test_arcsin_sqrt_endpoints():
    assert data.arcsin_sqrt(0.0) == 0.0
    assert data.arcsin_sqrt(1.0) == pytest.approx(math.pi / 2, rel=1e-15)


def test_arcsin_sqrt_rejects_percent_scale():
    with pytest.raises(PercentOutOfRange):
        data.arcsin_sqrt(25.0)
    with pytest.raises(PercentOutOfRange):
        data.arcsin_sqrt(-0.01)


def test_transform_covariates_standardizes_against_two_pass_oracle():
    raw = pd.DataFrame({"comuna_id": ["a", "b", "c"], "x": [0.1, 0.2, 0.3]})
    table = data.transform_covariates(raw, {"x": "identity"})
    v = np.array([0.1, 0.2, 0.3])
    expected = (v - v.mean()) / v.std(ddof=1)  # independent two-pass mean/SD
    assert table.names == ["intercept", "x"]
    assert np.allclose(table.matrix[:, 0], 1.0)
    assert np.allclose(table.matrix[:, 1], expected, rtol=0, atol=1e-15)


def test_transform_covariates_log_and_arcsin(rng):
    raw = pd.DataFrame(
        {
            "comuna_id": ["a", "b", "c", "d"],
            "wage": [100.0, 220.0, 150.0, 80.0],
            "pct": [0.1, 0.4, 0.25, 0.9],
        }
    )
    table = data.transform_covariates(raw, {"wage": "log", "pct": "arcsin_sqrt"})
    w = np.log(raw["wage"].to_numpy())
    p = np.arcsin(np.sqrt(raw["pct"].to_numpy()))
    assert np.allclose(table.matrix[:, 1], (w - w.mean()) / w.std(ddof=1))
    assert np.allclose(table.matrix[:, 2], (p - p.mean()) / p.std(ddof=1))


def test_transform_covariates_errors():
    base = {"comuna_id": ["a", "b"]}
    with pytest.raises(NonPositiveWage):
        data.transform_covariates(pd.DataFrame({**base, "wage": [0.0, 2.0]}), {"wage": "log"})
    with pytest.raises(PercentOutOfRange):
        data.transform_covariates(pd.DataFrame({**base, "pct": [0.5, 1.2]}), {"pct": "arcsin_sqrt"})
    with pytest.raises(ZeroVarianceColumn):
        data.transform_covariates(pd.DataFrame({**base, "x": [3.0, 3.0]}), {})
    with pytest.raises(ConfigError):
        data.transform_covariates(pd.DataFrame({**base, "x": [1.0, 2.0]}), {"x": "sqrt"})
    with pytest.raises(MissingColumn):
        data.transform_covariates(pd.DataFrame({"x": [1.0, 2.0]}), {})
    with pytest.raises(MissingColumn):
        data.transform_covariates(pd.DataFrame({**base, "x": [1.0, 2.0]}), {"y": "log"})


def test_design_for_missing_comuna_is_roster_mismatch():
    raw = pd.DataFrame({"comuna_id": ["a", "b", "c"], "x": [0.1, 0.2, 0.3]})
    table = data.transform_covariates(raw, {})
    with pytest.raises(RosterMismatch):
        table.design_for(["a", "z"])


# -- loader validation --------------------------------------------------------

def _write_csv(path, rows):
    pd.DataFrame(rows, columns=HH_COLUMNS).to_csv(path, index=False)


def _clean_rows(n=10):
    return [("a", 1, "p1", f"h{i}", float(i), 1.0 + i) for i in range(n)]


def test_load_households_clean(tmp_path):
    path = tmp_path / "hh.csv"
    _write_csv(path, _clean_rows())
    table = data.load_households(path)
    assert table.n_households == 10
    assert table.comuna_ids == ["a"]
    assert np.allclose(table.frame["t_income"], np.log1p(np.arange(10.0)))


def test_load_households_negative_income_reports_row(tmp_path):
    rows = _clean_rows()
    rows[7] = ("a", 1, "p1", "h7", -1.0, 2.0)
    path = tmp_path / "hh.csv"
    _write_csv(path, rows)
    with pytest.raises(NegativeIncome) as err:
        data.load_households(path)
    assert err.value.row == 7


def test_load_households_missing_column(tmp_path):
    path = tmp_path / "hh.csv"
    frame = pd.DataFrame(_clean_rows(), columns=HH_COLUMNS).drop(columns=["weight"])
    frame.to_csv(path, index=False)
    with pytest.raises(MissingColumn):
        data.load_households(path)


def test_load_households_nonpositive_weight(tmp_path):
    rows = _clean_rows()
    rows[2] = ("a", 1, "p1", "h2", 1.0, 0.0)
    path = tmp_path / "hh.csv"
    _write_csv(path, rows)
    with pytest.raises(NonPositiveWeight) as err:
        data.load_households(path)
    assert err.value.row == 2


def test_load_households_urbanicity_out_of_range(tmp_path):
    rows = _clean_rows()
    rows[4] = ("a", 3, "p1", "h4", 1.0, 2.0)
    path = tmp_path / "hh.csv"
    _write_csv(path, rows)
    with pytest.raises(UrbanicityOutOfRange):
        data.load_households(path)


def test_load_households_duplicate_key(tmp_path):
    rows = _clean_rows()
    rows[5] = ("a", 1, "p1", "h4", 1.0, 2.0)  # repeats h4's full key
    path = tmp_path / "hh.csv"
    _write_csv(path, rows)
    with pytest.raises(DuplicateHousehold):
        data.load_households(path)


def test_validate_reports_every_issue():
    rows = _clean_rows()
    rows[1] = ("a", 1, "p1", "h1", -2.0, 2.0)
    rows[3] = ("a", 1, "p1", "h3", 1.0, -1.0)
    rows[6] = ("a", 7, "p1", "h6", 1.0, 1.0)
    frame = pd.DataFrame(rows, columns=HH_COLUMNS)
    issues = data.validate_household_frame(frame)
    assert {i.kind for i in issues} == {"negative_income", "non_positive_weight", "urbanicity_out_of_range"}
    assert [i.row for i in issues] == [1, 3, 6]


def test_csv_round_trip_is_bit_stable(tmp_path, rng):
    rows = []
    for c in ("a", "b"):
        for i in range(23):
            rows.append(
                (c, 1 + i % 2, f"p{i % 4}", f"h{i}", float(rng.uniform(0, 1e6)), float(rng.uniform(0.1, 1e3)))
            )
    table = make_table(rows)
    first = tmp_path / "first.csv"
    second = tmp_path / "second.csv"
    data.save_households(table, first)
    reloaded = data.load_households(first)
    data.save_households(reloaded, second)
    assert first.read_bytes() == second.read_bytes()
    for col in ("income", "weight_raw", "t_income", "weight_scaled"):
        assert np.array_equal(reloaded.frame[col].to_numpy(), table.frame[col].to_numpy())
    assert reloaded.comuna_ids == table.comuna_ids


# -- cell grouping ------------------------------------------------------------

def test_cells_canonical_order():
    table = make_table(
        [
            ("b", 2, "p9", "h1", 1.0, 1.0),
            ("b", 1, "p2", "h1", 1.0, 1.0),
            ("a", 1, "p5", "h1", 1.0, 1.0),
            ("b", 1, "p1", "h1", 1.0, 1.0),
            ("b", 1, "p2", "h2", 1.0, 1.0),
        ]
    )
    cells = table.cells
    # comunas by first appearance, urbanicity ascending, PSUs by first appearance
    assert table.comuna_ids == ["b", "a"]
    assert cells.keys == (("b", 1, "p2"), ("b", 1, "p1"), ("b", 2, "p9"), ("a", 1, "p5"))
    assert cells.stratum_keys == (("b", 1), ("b", 2), ("a", 1))
    assert cells.count.tolist() == [2, 1, 1, 1]
    assert cells.stratum_cell_count.tolist() == [2, 1, 1]
    assert cells.hh_cell.tolist() == [2, 0, 3, 1, 0]
    assert cells.hh_comuna.tolist() == [0, 0, 1, 0, 0]


def test_cell_weight_mass_sums_to_one_per_comuna():
    table = make_table(
        [("a", 1, "p1", "h1", 1.0, 3.0), ("a", 1, "p2", "h2", 1.0, 1.0), ("a", 2, "p1", "h3", 1.0, 4.0)]
    )
    cells = table.cells
    per_comuna = np.bincount(cells.comuna_idx, weights=cells.weight_mass)
    assert np.allclose(per_comuna, 1.0, atol=1e-12)
    assert np.allclose(cells.weight_mass, [3 / 8, 1 / 8, 4 / 8])

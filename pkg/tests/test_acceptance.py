"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  Fixtures are deliberately frozen (seeds, sizes, tolerances) so the
suite is a reproducible gate, not a statistical roulette.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np
import pytest

from helpers import identity_covariates, table_from_t
from povmap import config, data, decide, fgt, sampler, synth
from povmap.service.client import request as service_request

GRID_SEED = 4150
N_ORACLE_DRAWS = 10_000_000


def _passed(line: str) -> None:
    print(f"PASS {line}")


# ---------------------------------------------------------------------------
# shared fixtures
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def oracle_grid():
    """20 random (theta, sd, line) points with 1e7-draw MC oracle values."""
    rng = np.random.default_rng(GRID_SEED)
    points = [
        (float(rng.uniform(0.1, 2.5)), float(rng.uniform(0.3, 1.5)), float(rng.uniform(0.8, 20.0)))
        for _ in range(20)
    ]
    start = time.monotonic()
    oracle = {
        alpha: [
            synth.mc_oracle_e_g(th, sd, k, alpha, n_draws=N_ORACLE_DRAWS, seed=GRID_SEED + 91 * i + alpha)
            for i, (th, sd, k) in enumerate(points)
        ]
        for alpha in (0, 1, 2)
    }
    return points, oracle, time.monotonic() - start


@pytest.fixture(scope="module")
def recovery_run():
    """Criterion-5 fixture: synthetic region, fit, Q-matrices, and the truth.

    Every PSU is sampled (households subsampled to ~40 per comuna) so the
    weighted-sample estimand stays within the posterior width of the exact
    finite-population index; intercepts keep the zero-income truncation
    negligible.
    """
    start = time.monotonic()
    cfg = synth.PopulationConfig(
        n_comunas=30,
        psus_per_stratum=4,
        households_per_psu=150,
        n_covariates=3,
        sd_household=0.8,
        sd_psu=0.25,
        sd_stratum=0.3,
        coef_urban=np.array([2.7, 0.3, -0.21, 0.147]),
        coef_rural=np.array([2.5, 0.3, -0.21, 0.147]),
        strata_pattern=((1, 2),),
    )
    pop = synth.generate_population(cfg, 41)
    sample = synth.draw_sample(
        pop, synth.SampleDesign(psus_per_stratum=None, households_per_psu=5), 42
    )
    lines = fgt.PovertyLines(
        urban=float(np.quantile(pop.income, 0.22)),
        rural=float(np.quantile(pop.income, 0.22)),
    )
    covariates = data.transform_covariates(pop.covariate_frame(), {})
    model = sampler.build_model_index(sample, covariates)
    settings = sampler.McmcSettings(burn_in=2000, draws=2000, chains=4)
    store = sampler.run_chains(model, sampler.PriorConfig(), settings, seed=287)
    q0 = fgt.build_q_matrix(store, sample, lines, 0)
    q1 = fgt.build_q_matrix(store, sample, lines, 1)
    rhat = sampler.psrf(store)
    elapsed = time.monotonic() - start
    return pop, sample, lines, store, q0, q1, rhat, elapsed


# ---------------------------------------------------------------------------
# criterion 1: closed forms vs Monte Carlo oracle
# ---------------------------------------------------------------------------

def test_criterion_1_closed_forms_match_mc_oracle(oracle_grid):
    points, oracle, oracle_time = oracle_grid
    for i, (theta, sd, line) in enumerate(points):
        est0, se0 = oracle[0][i]
        est1, se1 = oracle[1][i]
        got0 = fgt.expected_headcount(theta, sd, np.log1p(line))
        got1 = fgt.expected_gap(theta, sd, line)
        assert abs(got0 - est0) <= 4 * max(se0, 1e-12), (i, theta, sd, line)
        assert abs(got1 - est1) <= 4 * max(se1, 1e-12), (i, theta, sd, line)
    assert oracle_time < 120.0
    _passed(
        "criterion 1: headcount and gap closed forms within 4 SEs of the "
        f"1e7-draw MC oracle on 20 grid points ({oracle_time:.0f}s oracle time)"
    )


# ---------------------------------------------------------------------------
# criterion 2: quadrature consistency
# ---------------------------------------------------------------------------

def test_criterion_2_quadrature_consistency(oracle_grid):
    points, oracle, _ = oracle_grid
    for i, (theta, sd, line) in enumerate(points):
        q0 = fgt.expected_fgt_quadrature(theta, sd, line, 0)
        q1 = fgt.expected_fgt_quadrature(theta, sd, line, 1)
        g0 = fgt.expected_headcount(theta, sd, np.log1p(line))
        g1 = fgt.expected_gap(theta, sd, line)
        assert abs(q0 - g0) <= 1e-8 * max(g0, 1e-300)
        assert abs(q1 - g1) <= 1e-8 * max(g1, 1e-300)
        est2, se2 = oracle[2][i]
        got2 = fgt.expected_fgt_quadrature(theta, sd, line, 2)
        assert abs(got2 - est2) <= 4 * max(se2, 1e-12)
    _passed(
        "criterion 2: quadrature matches closed forms to 1e-8 relative at "
        "alpha 0/1 and the MC oracle within 4 SEs at alpha 2"
    )


# ---------------------------------------------------------------------------
# criterion 3: conjugate-update correctness
# ---------------------------------------------------------------------------

def _conjugate_fixture():
    rng = np.random.default_rng(5150)
    groups = {
        ("a", 1, "p1"): rng.normal(1.6, 0.7, 5).tolist(),
        ("a", 1, "p2"): rng.normal(1.9, 0.7, 4).tolist(),
        ("a", 2, "p1"): rng.normal(1.4, 0.7, 6).tolist(),
        ("b", 1, "p1"): rng.normal(2.2, 0.7, 5).tolist(),
        ("b", 1, "p2"): rng.normal(2.4, 0.7, 3).tolist(),
        ("c", 2, "p1"): rng.normal(1.1, 0.7, 7).tolist(),
    }
    table = table_from_t(groups)
    design = np.column_stack([np.ones(3), [0.4, -0.7, 1.1]])
    model = sampler.build_model_index(table, identity_covariates(["a", "b", "c"], design))
    state = sampler.init_state(model)
    state.sd_household, state.sd_psu, state.sd_stratum = 0.7, 0.35, 0.5
    return model, state


def test_criterion_3_conjugate_updates_match_closed_forms():
    model, state = _conjugate_fixture()
    priors = sampler.PriorConfig()
    rng = np.random.default_rng(616)
    n = 100_000

    theta = np.empty((n, model.n_cells))
    mu = np.empty((n, model.n_strata))
    coef = np.empty((n, 2, model.n_coef))
    for i in range(n):
        theta[i] = sampler.update_psu_means(state, rng).psu_mean
        mu[i] = sampler.update_stratum_means(state, rng).stratum_mean
        coef[i] = sampler.update_coefs(state, priors, rng).coef

    def check(draws, want_mean, want_var):
        se_mean = np.sqrt(want_var / n)
        assert np.all(np.abs(draws.mean(axis=0) - want_mean) <= 4 * se_mean)
        se_var = want_var * np.sqrt(2.0 / (n - 1))
        assert np.all(np.abs(draws.var(axis=0, ddof=1) - want_var) <= 4 * se_var)

    m, v = sampler.psu_mean_conditionals(state)
    check(theta, m, v)
    m, v = sampler.stratum_mean_conditionals(state)
    check(mu, m, v)
    for u in (1, 2):
        mean_u, cov_u = sampler.coef_conditionals(state, priors, u)
        check(coef[:, u - 1, :], mean_u, np.diag(cov_u))
    _passed(
        "criterion 3: empirical mean/variance of 1e5 draws from each Gibbs "
        "conditional match the closed forms within 4 SEs"
    )


# ---------------------------------------------------------------------------
# criterion 4: linear-Gaussian oracle with frozen SDs
# ---------------------------------------------------------------------------

def test_criterion_4_linear_gaussian_oracle():
    start = time.monotonic()
    rng = np.random.default_rng(99)
    groups = {
        ("a", 1, "p1"): rng.normal(1.8, 0.8, 6).tolist(),
        ("a", 1, "p2"): rng.normal(2.1, 0.8, 5).tolist(),
        ("b", 1, "p1"): rng.normal(2.6, 0.8, 7).tolist(),
        ("b", 1, "p2"): rng.normal(2.3, 0.8, 4).tolist(),
    }
    table = table_from_t(groups)
    design = np.array([[1.0, -0.6], [1.0, 0.9]])
    model = sampler.build_model_index(table, identity_covariates(["a", "b"], design))
    priors = sampler.PriorConfig()
    sd_h, sd_p, sd_s = 0.9, 0.4, 0.5

    # dense oracle over [psu means, stratum means, urban coefficients]
    cells = model.cells
    n_cells, n_strata, p = model.n_cells, model.n_strata, model.n_coef
    dim = n_cells + n_strata + p
    prec = np.zeros((dim, dim))
    shift = np.zeros(dim)
    for j in range(n_cells):
        prec[j, j] += cells.count[j] / sd_h**2 + 1 / sd_p**2
        shift[j] += cells.t_sum[j] / sd_h**2
        s = n_cells + cells.cell_stratum[j]
        prec[j, s] -= 1 / sd_p**2
        prec[s, j] -= 1 / sd_p**2
    for s in range(n_strata):
        row = n_cells + s
        prec[row, row] += cells.stratum_cell_count[s] / sd_p**2 + 1 / sd_s**2
        x = design[cells.stratum_comuna[s]]
        prec[row, n_cells + n_strata :] -= x / sd_s**2
        prec[n_cells + n_strata :, row] -= x / sd_s**2
    block = n_cells + n_strata
    prec[block:, block:] += design.T @ design / sd_s**2 + np.eye(p) / priors.beta_prior_sd**2
    exact_mean = np.linalg.solve(prec, shift)

    initial = replace(sampler.init_state(model), sd_household=sd_h, sd_psu=sd_p, sd_stratum=sd_s)
    settings = sampler.McmcSettings(burn_in=500, draws=5000, chains=4, sample_scales=False)
    store = sampler.run_chains(model, priors, settings, seed=414, initial=initial)
    draws = np.concatenate(
        [np.concatenate([c.psu_mean, c.stratum_mean, c.coef[:, 0, :]], axis=1) for c in store.chains]
    )
    per_chain = draws.reshape(settings.chains, settings.draws, dim)
    batches = per_chain.reshape(settings.chains, 8, settings.draws // 8, dim).mean(axis=2)
    se = batches.reshape(-1, dim).std(axis=0, ddof=1) / np.sqrt(8 * settings.chains)
    z = np.abs(draws.mean(axis=0) - exact_mean) / se
    elapsed = time.monotonic() - start
    assert np.all(z <= 3.0), z
    assert elapsed < 60.0
    _passed(
        "criterion 4: frozen-SD MCMC means match the dense 8-dimensional "
        f"Gaussian posterior within 3 MC SEs (max |z| = {z.max():.2f}, {elapsed:.0f}s)"
    )


# ---------------------------------------------------------------------------
# criterion 5: end-to-end recovery on a synthetic region
# ---------------------------------------------------------------------------

def test_criterion_5_end_to_end_recovery(recovery_run):
    pop, sample, lines, _, q0, _, rhat, elapsed = recovery_run
    truth = synth.true_fgt(pop, lines, 0)

    lo = np.quantile(q0.values, 0.05, axis=1)
    hi = np.quantile(q0.values, 0.95, axis=1)
    covered = int(np.sum((truth >= lo) & (truth <= hi)))
    assert covered >= 24, f"only {covered}/30 comunas covered"

    posterior_rmse = float(np.sqrt(np.mean((q0.values.mean(axis=1) - truth) ** 2)))
    direct = fgt.direct_estimates_by_comuna(sample, lines, 0)
    direct_rmse = float(np.sqrt(np.mean((direct - truth) ** 2)))
    assert posterior_rmse < direct_rmse

    values = np.array(list(rhat.values()))
    assert np.all(np.isfinite(values))
    assert np.max(values) < 1.1
    assert elapsed < 300.0
    _passed(
        f"criterion 5: 90% intervals cover truth for {covered}/30 comunas, "
        f"posterior RMSE {posterior_rmse:.4f} < direct RMSE {direct_rmse:.4f}, "
        f"max split-Rhat {values.max():.3f} < 1.1 ({elapsed:.0f}s)"
    )


# ---------------------------------------------------------------------------
# criterion 6: decision-layer exactness
# ---------------------------------------------------------------------------

def _count_oracle(values, thresholds, cutoff):
    C, R = values.shape
    exceed = np.zeros((C, len(thresholds)))
    flags = np.zeros((C, len(thresholds)), dtype=bool)
    pmax = np.zeros(C)
    pmin = np.zeros(C)
    for c in range(C):
        for j, a in enumerate(thresholds):
            count = sum(1 for r in range(R) if values[c, r] > a)
            exceed[c, j] = count / R
            flags[c, j] = exceed[c, j] > cutoff
    for r in range(R):
        worst = best = 0
        for c in range(1, C):
            if values[c, r] > values[worst, r]:
                worst = c
            if values[c, r] < values[best, r]:
                best = c
        pmax[worst] += 1
        pmin[best] += 1
    return exceed, flags, pmax / R, pmin / R


def test_criterion_6_decision_layer_exactness():
    rng = np.random.default_rng(6000)
    for trial in range(100):
        values = rng.uniform(0, 1, size=(10, 50))
        q = fgt.QMatrix(values=values, comuna_ids=[f"c{i}" for i in range(10)], alpha=0.0)
        regional = float(rng.uniform(0.2, 0.6))
        thresholds = decide.make_thresholds(regional, (1.10, 1.25, 1.50))
        exceed = decide.exceedance_probabilities(q, thresholds)
        flags = decide.flag(exceed, 0.5)
        pmax, pmin = decide.extreme_probabilities(q)
        want = _count_oracle(values, thresholds, 0.5)
        assert np.array_equal(exceed, want[0]), trial
        assert np.array_equal(flags, want[1]), trial
        assert np.array_equal(pmax, want[2]), trial
        assert np.array_equal(pmin, want[3]), trial
        assert abs(pmax.sum() - 1.0) <= 1e-12
        assert abs(pmin.sum() - 1.0) <= 1e-12
        assert np.all(np.diff(exceed, axis=1) <= 0)
    _passed(
        "criterion 6: exceedance, flags, and rank probabilities equal the "
        "exhaustive counting oracle exactly on 100 random 10x50 matrices"
    )


# ---------------------------------------------------------------------------
# criterion 7: gap never exceeds rate
# ---------------------------------------------------------------------------

def test_criterion_7_gap_matrix_below_rate_matrix(recovery_run):
    _, _, _, _, q0, q1, _, _ = recovery_run
    assert q0.values.shape == q1.values.shape
    assert np.all(q1.values <= q0.values)
    _passed(
        "criterion 7: the alpha=1 Q-matrix is entry-wise <= the alpha=0 "
        "Q-matrix built from identical draws"
    )


# ---------------------------------------------------------------------------
# criterion 8: byte-identical pipeline runs
# ---------------------------------------------------------------------------

ARTIFACTS = [
    "population.csv", "sample.csv", "covariates.csv", "true_params.txt", "run.config",
    "draws.csv", "psrf.csv", "qmatrix_alpha0.csv", "qmatrix_alpha1.csv",
    "point_alpha0.csv", "point_alpha1.csv", "flags_alpha0.csv", "flags_alpha1.csv",
    "extremes_alpha0.csv", "extremes_alpha1.csv",
]


def _run_pipeline(out_dir, workers):
    payload = {
        "seed": 88,
        "burn_in": 60,
        "draws": 80,
        "chains": 2,
        "workers": workers,
        "alphas": [0.0, 1.0],
        "out": str(out_dir),
        "sim": {
            "comunas": 8,
            "psus_per_stratum": 3,
            "households_per_psu": 12,
            "covariates": 2,
            "sample_psus": 2,
            "sample_households": 6,
        },
    }
    for stage in ("simulate", "fit", "qmatrix", "report"):
        status, body = service_request(stage, payload)
        assert status == 200, body
        if stage == "simulate":
            payload = config.load_config(out_dir / "run.config").as_payload()
            payload["workers"] = workers


def test_criterion_8_pipeline_determinism(tmp_path):
    _run_pipeline(tmp_path / "one", workers=1)
    _run_pipeline(tmp_path / "two", workers=1)
    _run_pipeline(tmp_path / "par", workers=2)
    for name in ARTIFACTS:
        reference = (tmp_path / "one" / name).read_bytes()
        assert (tmp_path / "two" / name).read_bytes() == reference, name
        assert (tmp_path / "par" / name).read_bytes() == reference, name
    _passed(
        "criterion 8: repeated fixed-seed pipeline runs are byte-identical, "
        "including under a different worker count"
    )

from __future__ import annotations

import numpy as np
import pytest

from povmap import data, sampler, synth


@pytest.fixture(scope="session")
def small_region():
    """A small synthetic region with its sample, covariates, and model index."""
    cfg = synth.PopulationConfig(
        n_comunas=5, psus_per_stratum=3, households_per_psu=12, n_covariates=2
    )
    pop = synth.generate_population(cfg, 101)
    table = synth.draw_sample(pop, synth.SampleDesign(psus_per_stratum=2, households_per_psu=6), 202)
    covariates = data.transform_covariates(pop.covariate_frame(), {})
    model = sampler.build_model_index(table, covariates)
    return pop, table, covariates, model


@pytest.fixture(scope="session")
def small_store(small_region):
    """Short two-chain run on the small region, reused by Q-matrix tests."""
    _, _, _, model = small_region
    settings = sampler.McmcSettings(burn_in=80, draws=60, chains=2)
    return sampler.run_chains(model, sampler.PriorConfig(), settings, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)

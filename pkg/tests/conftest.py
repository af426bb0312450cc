import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from covmod.binning import quantile_bins
from covmod.fit import fit_joint
from covmod.simulation import SimConfig, simulate

settings.register_profile("ci", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(scope="session")
def strong_small():
    """Strong-modulation data, m = 3000, with its 5-bin layout and fit."""
    ds, truth = simulate(SimConfig(m=3000, pibar0=0.5, pi0_at_0=0.9, pi0_at_1=0.1, seed=7))
    layout = quantile_bins(ds, 5)
    return ds, truth, layout, fit_joint(ds, layout)


@pytest.fixture(scope="session")
def weak_small():
    ds, truth = simulate(SimConfig(m=3000, pibar0=0.5, pi0_at_0=0.55, pi0_at_1=0.45, seed=7))
    layout = quantile_bins(ds, 5)
    return ds, truth, layout, fit_joint(ds, layout)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

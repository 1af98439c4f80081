from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from ctmcfilter.model import ModelSpec
from ctmcfilter.sim import preset

ACCEPTANCE_LINES = pytest.StashKey[list]()

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def two_state():
    return preset("two-state").model


@pytest.fixture(scope="session")
def five_state():
    return preset("five-state").model


def random_model(rng, d, sigma=None):
    """Dense random generator (all rates positive) with distinct drifts."""
    q = rng.uniform(0.2, 2.0, size=(d, d))
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    alpha = np.sort(rng.uniform(-3.0, 3.0, size=d))
    alpha += np.arange(d) * 0.05  # keep drifts distinct
    p0 = rng.dirichlet(np.ones(d))
    sig = rng.uniform(0.5, 2.0) if sigma is None else sigma
    return ModelSpec.from_arrays(alpha, q, p0, sig)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance summary")
        for line in sorted(lines):
            terminalreporter.write_line(line)

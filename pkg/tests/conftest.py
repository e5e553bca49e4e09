import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trashfire.ingest import from_arrays
from trashfire.synthetic import generate_arrays

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SHAPES = {
    "exponential": {},
    "weibull": {"sigma": 0.7},
    "log_normal": {"sigma": 0.8},
    "log_logistic": {"sigma": 0.5},
    "generalized_gamma": {"rho": 2.0, "beta": 1.5},
}


def make_data(family, shape, seed, n=2000, coef=(0.5, -1.0, 0.25), intercept=0.3, censoring=None):
    """Uniform(-1, 1) covariates and AFT times drawn from ``family``."""
    rng = np.random.default_rng(10_000 + seed)
    X = rng.uniform(-1.0, 1.0, (n, len(coef)))
    t, e = generate_arrays(family, intercept, coef, shape, X, seed=seed, censoring=censoring)
    return from_arrays(X, t, e)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from trashfire.cost import (
    CostModel,
    EmptySubsetError,
    accuracy,
    attack_cost,
    conditional_subset,
    expected_survival,
    failure_rate,
    mean_profile,
    trash_analysis,
    trash_score,
    training_cost,
)
from trashfire.ingest import ExperimentRecord, encode
from trashfire.models import AftModel, CoxModel, DomainError, survival


def exp_model(phi):
    return AftModel("exponential", [math.log(phi)])


def weibull_model(phi, sigma):
    return AftModel("weibull", [math.log(phi)], shape={"sigma": sigma})


# ---------------------------------------------------------------- arithmetic


def test_accuracy_and_rate():
    assert accuracy(10, 100) == pytest.approx(0.9)
    assert failure_rate(5, 2.0) == 2.5
    assert accuracy(0, 7) == 1.0 and failure_rate(0, 3.0) == 0.0
    with pytest.raises(DomainError):
        failure_rate(1, 0.0)
    with pytest.raises(DomainError):
        accuracy(3, 2)


def test_costs():
    assert training_cost(CostModel(2.0, 4, 1), 3.0) == 24.0
    assert attack_cost(CostModel(1.0, 1, 100), 0.5) == 50.0
    assert training_cost(CostModel(1.5, 1, 1), 2.0) == 1.5 * 2.0
    with pytest.raises(DomainError):
        CostModel(0.0, 1, 1)


def test_trash_examples():
    r = trash_score(10.0, 2.0)
    assert r.trash_score == 5.0 and r.verdict == "broken"
    r = trash_score(1.0, 1.0)
    assert r.trash_score == 1.0 and r.verdict == "not-broken"
    r = trash_score(0.001, 10.0)
    assert r.trash_score == pytest.approx(1e-4, rel=1e-15) and not r.broken
    with pytest.raises(DomainError):
        trash_score(0.0, 1.0)


@given(a=st.integers(1, 10**6), b=st.integers(1, 10**6), c=st.integers(1, 10**6), d=st.integers(1, 10**6))
def test_trash_score_exact_on_rationals(a, b, c, d):
    t_train, e_t = a / b, c / d
    score = trash_score(t_train, e_t).trash_score
    # correctly rounded quotient of the two doubles
    exact = Fraction(t_train) / Fraction(e_t)
    assert score == float(exact)
    assert (score > 1) == (trash_score(t_train, e_t).verdict == "broken")


@given(a=st.floats(1e-6, 1e6), b=st.floats(1e-6, 1e6))
def test_trash_reciprocity(a, b):
    assert trash_score(a, b).trash_score * trash_score(b, a).trash_score == pytest.approx(1.0, rel=1e-15)


def test_verdict_flips_strictly_above_one():
    one = 1.0
    above = math.nextafter(one, 2.0)
    assert trash_score(one, 1.0).verdict == "not-broken"
    assert trash_score(above, 1.0).verdict == "broken"


# ---------------------------------------------------------------- expected survival


def test_unit_exponential_examples():
    m = exp_model(1.0)
    assert expected_survival(m, [], math.inf) == pytest.approx(1.0, abs=1e-9)
    assert expected_survival(m, [], math.log(2.0)) == pytest.approx(0.5, abs=1e-12)
    assert expected_survival(m, [], 1e-9) == pytest.approx(1e-9, rel=1e-6)
    with pytest.raises(DomainError):
        expected_survival(m, [], 0.0)


def test_exponential_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(50):
        phi = float(np.exp(rng.uniform(-3, 3)))
        t_star = phi * float(np.exp(rng.uniform(-3, 3)))
        exact = phi * -math.expm1(-t_star / phi)
        assert expected_survival(exp_model(phi), [], t_star) == pytest.approx(exact, rel=1e-6)


def test_weibull_closed_form_via_incomplete_gamma():
    rng = np.random.default_rng(1)
    for _ in range(50):
        phi = float(np.exp(rng.uniform(-3, 3)))
        sigma = float(rng.uniform(0.2, 3.0))
        t_star = phi * float(np.exp(rng.uniform(-3, 3)))
        exact = phi * sigma * math.gamma(sigma) * special.gammainc(sigma, (t_star / phi) ** (1 / sigma))
        assert expected_survival(weibull_model(phi, sigma), [], t_star) == pytest.approx(exact, rel=1e-6)


@given(family=st.sampled_from(["exponential", "weibull", "log_normal", "log_logistic", "generalized_gamma"]),
       eta=st.floats(-2, 2), a=st.floats(0.3, 2.0), t_star=st.floats(1e-3, 50.0), t2=st.floats(1e-3, 50.0))
def test_expected_survival_bounds_and_monotone(family, eta, a, t_star, t2):
    shape = {} if family == "exponential" else (
        {"rho": a, "beta": 1.0 / a} if family == "generalized_gamma" else {"sigma": a})
    m = AftModel(family, [eta], shape=shape)
    e = expected_survival(m, [], t_star)
    tol = 1e-6 * t_star
    assert t_star * survival(m, [], t_star) - tol <= e <= t_star + tol
    lo, hi = sorted((t_star, t2))
    assert expected_survival(m, [], lo) <= expected_survival(m, [], hi) + 1e-6 * hi


def test_cox_step_integral():
    m = CoxModel(theta=[0.0], baseline_times=[1.0, 2.0], baseline_values=[0.5, 1.0])
    # S = 1 on [0,1), e^-0.5 on [1,2), e^-1 on [2, 3]
    exact = 1.0 + math.exp(-0.5) + math.exp(-1.0)
    assert expected_survival(m, [0.0], 3.0) == pytest.approx(exact, rel=1e-14)
    assert expected_survival(m, [0.0], math.inf) == math.inf


# ---------------------------------------------------------------- conditioning


def _records(strengths, t_train=0.004):
    return [
        ExperimentRecord("mnist", "fgm", s, "control", 0.0, 18, 20 + i, t_train, 0.0002, 0.3 + 0.1 * i, True, 0.98, 0.2)
        for i, s in enumerate(strengths)
    ]


def _dataset(strengths, **kw):
    with pytest.warns():
        train, _ = encode(_records(strengths, **kw) * 2, seed=0, test_fraction=0.01)
    return train


def test_conditional_subset_filters():
    ds = _dataset([0.1, 0.5, 1.0])
    sub = conditional_subset(ds, 0.5)
    assert sorted({r.attack_strength for r in sub.records}) == [0.1, 0.5]
    assert len(sub) == sum(r.attack_strength <= 0.5 for r in ds.records)
    assert sub.encoding_meta is ds.encoding_meta


def test_conditional_subset_infinite_is_identity():
    ds = _dataset([0.1, 0.5, 1.0])
    sub = conditional_subset(ds, math.inf)
    assert np.array_equal(sub.design, ds.design) and np.array_equal(sub.times, ds.times)


def test_conditional_subset_empty():
    ds = _dataset([0.1, 0.5, 1.0])
    with pytest.raises(EmptySubsetError):
        conditional_subset(ds, 0.05)


def test_trash_analysis_defaults():
    ds = _dataset([0.1, 0.5, 1.0], t_train=2.0)
    m = AftModel("exponential", [0.0] + [0.0] * len(ds.feature_names), feature_names=ds.feature_names)
    rep = trash_analysis(m, ds, epsilon_max=0.5)
    sub = conditional_subset(ds, 0.5)
    horizon = float(sub.times.max())
    assert rep.horizon == horizon
    assert rep.t_train == pytest.approx(2.0)
    assert rep.expected_survival == pytest.approx(-math.expm1(-horizon), rel=1e-9)
    assert mean_profile(sub).shape == (len(ds.feature_names),)

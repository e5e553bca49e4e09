import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from trashfire.models import (
    AftFamily,
    AftModel,
    ContractError,
    CoxModel,
    DomainError,
    ExtrapolationWarning,
    acceleration,
    baseline_survival,
    cox_hazard_ratio,
    cox_survival,
    cumulative_hazard,
    density,
    hazard,
    median_survival,
    model_from_dict,
    std_normal_cdf,
    survival,
)


def scipy_dist(family, phi, shape):
    """Independent reference distribution with scale phi."""
    if family == "exponential":
        return stats.expon(scale=phi)
    if family == "weibull":
        return stats.weibull_min(1.0 / shape["sigma"], scale=phi)
    if family == "log_normal":
        return stats.lognorm(shape["sigma"], scale=phi)
    if family == "log_logistic":
        return stats.fisk(1.0 / shape["sigma"], scale=phi)
    return stats.gengamma(shape["rho"], shape["beta"], scale=phi / shape.get("lam", 1.0))


def intercept_model(family, phi, shape):
    return AftModel(family, [math.log(phi)], shape=shape)


positive = st.floats(0.2, 3.0)
families = st.sampled_from([f.value for f in AftFamily])


def shape_for(family, a, b):
    if family == "exponential":
        return {}
    if family == "generalized_gamma":
        return {"rho": a, "beta": b}
    return {"sigma": a}


# ---------------------------------------------------------------- acceleration


def test_acceleration_zero_coefficients_is_one():
    m = AftModel("weibull", [0.0, 0.0, 0.0], shape={"sigma": 1.0})
    assert acceleration(m, [3.0, -7.0]) == 1.0


def test_acceleration_intercept_only():
    m = AftModel("exponential", [math.log(2.0), 0.0])
    assert acceleration(m, [0.0]) == pytest.approx(2.0, rel=1e-15)


def test_acceleration_direct_evaluation():
    m = AftModel("exponential", [0.0, 0.5, -1.0])
    assert acceleration(m, [1.0, 1.0]) == pytest.approx(0.60653065971263342, rel=1e-14)


def test_acceleration_dimension_mismatch():
    m = AftModel("exponential", [0.0, 0.5, -1.0])
    with pytest.raises(ContractError):
        acceleration(m, [1.0])


# ---------------------------------------------------------------- survival examples
# Time is measured in units of phi: S(t | x) = S0(t / phi).  A rate-lambda
# exponential therefore has phi = 1 / lambda.


def test_exponential_rate_half_at_two():
    # rate 0.5 <=> phi = 2; S(2) = exp(-1)
    m = intercept_model("exponential", 2.0, {})
    assert survival(m, [], 2.0) == pytest.approx(math.exp(-1.0), rel=1e-14)


@pytest.mark.parametrize("family", ["log_logistic", "log_normal"])
def test_symmetric_families_half_at_phi(family):
    m = intercept_model(family, 1.7, {"sigma": 0.6})
    assert survival(m, [], 1.7) == pytest.approx(0.5, abs=1e-15)


@given(phi=positive, t=st.floats(1e-3, 20.0))
def test_weibull_sigma_one_is_exponential(phi, t):
    w = intercept_model("weibull", phi, {"sigma": 1.0})
    e = intercept_model("exponential", phi, {})
    assert survival(w, [], t) == pytest.approx(survival(e, [], t), rel=1e-13, abs=1e-300)


def test_exponential_hazard_constant():
    m = intercept_model("exponential", 0.25, {})
    h = hazard(m, [], np.array([0.01, 0.5, 3.0, 40.0]))
    np.testing.assert_allclose(h, 4.0, rtol=1e-12)


def test_weibull_unit_point():
    m = intercept_model("weibull", 1.0, {"sigma": 0.5})
    assert survival(m, [], 1.0) == pytest.approx(math.exp(-1.0), rel=1e-14)
    assert cumulative_hazard(m, [], 1.0) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("t", [0.0, -1.0, float("nan")])
def test_non_positive_time_is_domain_error(t):
    m = intercept_model("weibull", 1.0, {"sigma": 0.5})
    with pytest.raises(DomainError):
        survival(m, [], t)


def test_shape_must_be_positive():
    with pytest.raises(DomainError):
        AftModel("weibull", [0.0], shape={"sigma": 0.0})
    with pytest.raises(ContractError):
        AftModel("weibull", [0.0], shape={})


def test_unknown_family():
    with pytest.raises(ContractError):
        AftFamily.parse("gompertz")


# ---------------------------------------------------------------- scipy oracle


@pytest.mark.parametrize("family", [f.value for f in AftFamily])
def test_survival_density_hazard_against_scipy(family):
    rng = np.random.default_rng(3)
    for _ in range(25):
        phi = float(np.exp(rng.uniform(-2, 2)))
        shape = shape_for(family, float(rng.uniform(0.3, 2.5)), float(rng.uniform(0.4, 2.5)))
        ref = scipy_dist(family, phi, shape)
        m = intercept_model(family, phi, shape)
        t = phi * np.exp(rng.uniform(-3, 1.5, 20))
        np.testing.assert_allclose(survival(m, [], t), ref.sf(t), rtol=1e-9, atol=1e-300)
        np.testing.assert_allclose(density(m, [], t), ref.pdf(t), rtol=1e-9, atol=1e-300)
        np.testing.assert_allclose(hazard(m, [], t), ref.pdf(t) / ref.sf(t), rtol=1e-8)
        assert median_survival(m, []) == pytest.approx(ref.median(), rel=1e-9)


# ---------------------------------------------------------------- properties


@given(family=families, a=st.floats(0.3, 2.5), b=st.floats(0.4, 2.5), eta=st.floats(-3, 3),
       t1=st.floats(1e-3, 50.0), t2=st.floats(1e-3, 50.0))
def test_survival_monotone(family, a, b, eta, t1, t2):
    m = AftModel(family, [eta], shape=shape_for(family, a, b))
    lo, hi = sorted((t1, t2))
    s_lo, s_hi = survival(m, [], lo), survival(m, [], hi)
    assert 0.0 <= s_hi <= s_lo <= 1.0


@given(family=families, a=st.floats(0.3, 2.5), b=st.floats(0.4, 2.5), eta=st.floats(-3, 3), t=st.floats(1e-3, 30.0))
def test_cumulative_hazard_plus_log_survival_is_zero(family, a, b, eta, t):
    m = AftModel(family, [eta], shape=shape_for(family, a, b))
    s = survival(m, [], t)
    if s > 1e-300:
        assert cumulative_hazard(m, [], t) + math.log(s) == pytest.approx(0.0, abs=1e-12)


@given(family=families, a=st.floats(0.3, 2.5), b=st.floats(0.4, 2.5), eta=st.floats(-2, 2), t=st.floats(1e-2, 10.0))
def test_density_is_hazard_times_survival(family, a, b, eta, t):
    m = AftModel(family, [eta], shape=shape_for(family, a, b))
    f, h, s = density(m, [], t), hazard(m, [], t), survival(m, [], t)
    assert f == pytest.approx(h * s, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("family", [f.value for f in AftFamily])
def test_density_integrates_to_failure_probability(family):
    rng = np.random.default_rng(11)
    for _ in range(5):
        shape = shape_for(family, float(rng.uniform(0.4, 2.0)), float(rng.uniform(0.6, 2.0)))
        m = intercept_model(family, float(np.exp(rng.uniform(-1, 1))), shape)
        t_star = float(np.exp(rng.uniform(-1, 1.5)))
        val, _ = integrate.quad(lambda u: density(m, [], u), 0.0, t_star, epsabs=1e-12, epsrel=1e-12, limit=200)
        assert abs(val - (1.0 - survival(m, [], t_star))) < 1e-6


@given(family=families, a=st.floats(0.3, 2.5), b=st.floats(0.4, 2.5),
       theta=st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3),
       x=st.lists(st.floats(-2, 2), min_size=2, max_size=2), t=st.floats(1e-3, 30.0))
def test_aft_identity(family, a, b, theta, x, t):
    shape = shape_for(family, a, b)
    m = AftModel(family, theta, shape=shape)
    phi = acceleration(m, x)
    assert survival(m, x, t) == pytest.approx(baseline_survival(family, shape, t / phi), abs=1e-10)


def test_generalized_gamma_embeds_exponential_and_weibull():
    t = np.exp(np.linspace(-4, 2.5, 200))
    for phi in (0.3, 1.0, 4.0):
        gg = intercept_model("generalized_gamma", phi, {"rho": 1.0, "beta": 1.0})
        ex = intercept_model("exponential", phi, {})
        np.testing.assert_allclose(survival(gg, [], t), survival(ex, [], t), atol=1e-8)
        for sigma in (0.4, 1.3):
            gw = intercept_model("generalized_gamma", phi, {"rho": 1.0, "beta": 1.0 / sigma})
            wb = intercept_model("weibull", phi, {"sigma": sigma})
            np.testing.assert_allclose(survival(gw, [], t), survival(wb, [], t), atol=1e-8)


def test_std_normal_cdf_precision():
    z = np.linspace(-8, 8, 1601)
    np.testing.assert_allclose(std_normal_cdf(z), stats.norm.cdf(z), rtol=1e-12)


def test_matrix_evaluation_matches_rows():
    m = AftModel("log_logistic", [0.1, 0.4, -0.3], shape={"sigma": 0.6})
    X = np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]])
    rowwise = [survival(m, x, 1.3) for x in X]
    np.testing.assert_allclose(survival(m, X, 1.3), rowwise, rtol=0, atol=0)


# ---------------------------------------------------------------- Cox


def step_model(theta=(0.0,)):
    return CoxModel(theta=list(theta), baseline_times=[1.0, 2.0], baseline_values=[0.5, 1.0])


def test_cox_zero_theta_ratio_one():
    assert cox_hazard_ratio(step_model(), [4.2]) == 1.0


def test_cox_step_lookup():
    res = cox_survival(step_model(), [0.0], 1.5)
    assert res.survival == pytest.approx(math.exp(-0.5), rel=1e-15)
    assert not res.extrapolated


def test_cox_time_zero():
    assert cox_survival(step_model(), [1.0], 0.0).survival == 1.0


def test_cox_extrapolation_flag():
    with pytest.warns(ExtrapolationWarning):
        res = cox_survival(step_model(), [0.0], 3.0)
    assert res.extrapolated
    assert res.survival == pytest.approx(math.exp(-1.0))


def test_cox_baseline_must_be_monotone():
    with pytest.raises(ContractError):
        CoxModel(theta=[0.0], baseline_times=[1.0, 2.0], baseline_values=[0.5, 0.4])


# ---------------------------------------------------------------- serialisation


@given(family=families, a=st.floats(0.3, 2.5), b=st.floats(0.4, 2.5),
       theta=st.lists(st.floats(-5, 5), min_size=1, max_size=4), ll=st.floats(-1e6, 0))
def test_aft_round_trip_value_exact(family, a, b, theta, ll):
    m = AftModel(family, theta, shape=shape_for(family, a, b), log_likelihood=ll)
    back = model_from_dict(m.to_dict())
    assert back.family is m.family
    assert np.array_equal(back.theta, m.theta)
    assert back.shape == m.shape
    assert back.log_likelihood == m.log_likelihood
    assert back.feature_names == m.feature_names


def test_cox_round_trip():
    m = CoxModel(theta=[0.3, -0.1], baseline_times=[0.5, 1.5], baseline_values=[0.1, 0.7],
                 log_partial_likelihood=-12.5, feature_names=("a", "b"))
    back = model_from_dict(m.to_dict())
    assert isinstance(back, CoxModel)
    assert np.array_equal(back.theta, m.theta)
    assert np.array_equal(back.baseline_values, m.baseline_values)
    assert back.feature_names == ("a", "b")


def test_models_are_immutable():
    m = AftModel("weibull", [0.0], shape={"sigma": 1.0})
    with pytest.raises(Exception):
        m.theta[0] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert survival(m, [], 1.0) == pytest.approx(math.exp(-1.0))

"""Parametric AFT families and the Cox proportional hazards model.

Every AFT family is written in the time-acceleration form

    S(t | x) = S0(t / phi(x)),   phi(x) = exp(theta_0 + theta . x)

so a larger acceleration factor stretches survival.  The exponential, Weibull,
log-normal and log-logistic baselines are location-scale families on the
log-time axis: with ``z = (log t - log phi) / sigma`` the log survival and log
density follow from a standard error distribution (Gumbel-min, normal,
logistic).  The generalized gamma keeps an explicit scale ``lam``:

    S(t | x) = Q(rho, (lam * t / phi(x)) ** beta)

where ``Q`` is the regularized upper incomplete gamma function.  It is
evaluated on the log scale, ``w = log(lam) + log(t) - log(phi)`` and
``z = exp(beta * w)``, which keeps it finite when ``rho * beta`` is large.
``rho = 1, beta = 1 / sigma, lam = 1`` embeds the Weibull, ``rho = beta = 1``
the exponential.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special

__all__ = [
    "AftFamily",
    "AftModel",
    "CoxModel",
    "ContractError",
    "DomainError",
    "ExtrapolationWarning",
    "acceleration",
    "linear_predictor",
    "baseline_survival",
    "survival",
    "hazard",
    "cumulative_hazard",
    "density",
    "log_survival",
    "log_density",
    "median_survival",
    "cox_hazard_ratio",
    "cox_survival",
    "CoxSurvival",
    "shape_names",
    "std_normal_cdf",
]

_LOG_2PI = math.log(2.0 * math.pi)


class ContractError(ValueError):
    """A caller violated an operation's preconditions (shapes, arities)."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ExtrapolationWarning(UserWarning):
    pass


class AftFamily(str, enum.Enum):
    EXPONENTIAL = "exponential"
    WEIBULL = "weibull"
    LOG_NORMAL = "log_normal"
    LOG_LOGISTIC = "log_logistic"
    GENERALIZED_GAMMA = "generalized_gamma"

    @classmethod
    def parse(cls, value: "AftFamily | str") -> "AftFamily":
        try:
            return cls(value)
        except ValueError:
            raise ContractError(f"unknown AFT family {value!r}") from None


_SHAPES = {
    AftFamily.EXPONENTIAL: (),
    AftFamily.WEIBULL: ("sigma",),
    AftFamily.LOG_NORMAL: ("sigma",),
    AftFamily.LOG_LOGISTIC: ("sigma",),
    AftFamily.GENERALIZED_GAMMA: ("rho", "beta", "lam"),
}


def shape_names(family: AftFamily | str) -> tuple[str, ...]:
    """Names of the shape parameters a family carries, in canonical order."""
    return _SHAPES[AftFamily.parse(family)]


def std_normal_cdf(z):
    """Standard normal CDF via the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class AftModel:
    """A fitted (or hand-specified) accelerated failure time model.

    ``theta[0]`` is the intercept; ``theta[1:]`` pairs with ``feature_names``.
    ``covariance`` is the inverse observed information over
    ``theta`` followed by the free shape parameters, or None when unavailable.
    """

    family: AftFamily
    theta: np.ndarray
    shape: dict = field(default_factory=dict)
    log_likelihood: float = float("nan")
    n_params: int = 0
    feature_names: tuple = ()
    covariance: np.ndarray | None = None
    n_obs: int = 0

    def __post_init__(self):
        family = AftFamily.parse(self.family)
        object.__setattr__(self, "family", family)
        theta = np.array(self.theta, dtype=float).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        names = tuple(str(n) for n in self.feature_names)
        if not names and theta.size > 1:
            names = tuple(f"x{i}" for i in range(1, theta.size))
        object.__setattr__(self, "feature_names", names)
        if theta.size != len(names) + 1:
            raise ContractError(
                f"theta has {theta.size} entries but {len(names)} features (+1 intercept) were named"
            )
        shape = dict(self.shape)
        if family is AftFamily.GENERALIZED_GAMMA:
            shape.setdefault("lam", 1.0)
        expected = set(_SHAPES[family])
        if set(shape) != expected:
            raise ContractError(f"{family.value} needs shape parameters {sorted(expected)}, got {sorted(shape)}")
        for key, value in shape.items():
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"shape parameter {key}={value!r} must be positive and finite")
        object.__setattr__(self, "shape", {k: float(shape[k]) for k in _SHAPES[family]})
        if self.covariance is not None:
            cov = np.array(self.covariance, dtype=float)
            cov.setflags(write=False)
            object.__setattr__(self, "covariance", cov)
        if not self.n_params:
            free = len(_SHAPES[family]) - (1 if family is AftFamily.GENERALIZED_GAMMA else 0)
            object.__setattr__(self, "n_params", theta.size + free)

    @property
    def intercept(self) -> float:
        return float(self.theta[0])

    @property
    def coefficients(self) -> np.ndarray:
        return self.theta[1:]

    def to_dict(self) -> dict:
        out = {
            "kind": "aft",
            "family": self.family.value,
            "feature_names": list(self.feature_names),
            "intercept": float(self.theta[0]),
            "coefficients": [float(v) for v in self.theta[1:]],
            "shape": dict(self.shape),
            "log_likelihood": float(self.log_likelihood),
            "n_params": int(self.n_params),
            "n_obs": int(self.n_obs),
        }
        out["covariance"] = None if self.covariance is None else self.covariance.tolist()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "AftModel":
        if doc.get("kind", "aft") != "aft":
            raise ContractError(f"document describes a {doc.get('kind')!r} model, not an AFT model")
        theta = [doc["intercept"], *doc["coefficients"]]
        cov = doc.get("covariance")
        ll = doc.get("log_likelihood")
        return cls(
            family=doc["family"],
            theta=np.array(theta, dtype=float),
            shape=dict(doc.get("shape", {})),
            log_likelihood=float("nan") if ll is None else float(ll),
            n_params=int(doc.get("n_params", 0)),
            feature_names=tuple(doc["feature_names"]),
            covariance=None if cov is None else np.array(cov, dtype=float),
            n_obs=int(doc.get("n_obs", 0)),
        )


@dataclass(frozen=True)
class CoxModel:
    """Cox proportional hazards model with a Breslow step baseline.

    ``baseline_times`` are the distinct event times in increasing order and
    ``baseline_values`` the cumulative baseline hazard just after each of them.
    """

    theta: np.ndarray
    baseline_times: np.ndarray
    baseline_values: np.ndarray
    log_partial_likelihood: float = float("nan")
    feature_names: tuple = ()
    covariance: np.ndarray | None = None
    n_obs: int = 0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        times = np.array(self.baseline_times, dtype=float).reshape(-1)
        values = np.array(self.baseline_values, dtype=float).reshape(-1)
        if times.shape != values.shape:
            raise ContractError("baseline times and values differ in length")
        if times.size and (np.any(np.diff(times) <= 0) or times[0] < 0):
            raise ContractError("baseline times must be non-negative and strictly increasing")
        if values.size and (np.any(np.diff(values) < 0) or values[0] < 0):
            raise ContractError("baseline cumulative hazard must be non-negative and non-decreasing")
        for arr in (theta, times, values):
            arr.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "baseline_times", times)
        object.__setattr__(self, "baseline_values", values)
        names = tuple(str(n) for n in self.feature_names)
        if not names and theta.size:
            names = tuple(f"x{i}" for i in range(1, theta.size + 1))
        if len(names) != theta.size:
            raise ContractError(f"theta has {theta.size} entries but {len(names)} features were named")
        object.__setattr__(self, "feature_names", names)
        if self.covariance is not None:
            cov = np.array(self.covariance, dtype=float)
            cov.setflags(write=False)
            object.__setattr__(self, "covariance", cov)

    @property
    def n_params(self) -> int:
        return int(self.theta.size)

    @property
    def log_likelihood(self) -> float:
        return self.log_partial_likelihood

    def to_dict(self) -> dict:
        return {
            "kind": "cox",
            "family": "cox",
            "feature_names": list(self.feature_names),
            "coefficients": [float(v) for v in self.theta],
            "baseline": [[float(t), float(h)] for t, h in zip(self.baseline_times, self.baseline_values)],
            "log_partial_likelihood": float(self.log_partial_likelihood),
            "n_obs": int(self.n_obs),
            "covariance": None if self.covariance is None else self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CoxModel":
        if doc.get("kind") != "cox":
            raise ContractError(f"document describes a {doc.get('kind')!r} model, not a Cox model")
        baseline = np.array(doc.get("baseline", []), dtype=float).reshape(-1, 2)
        cov = doc.get("covariance")
        ll = doc.get("log_partial_likelihood")
        return cls(
            theta=np.array(doc["coefficients"], dtype=float),
            baseline_times=baseline[:, 0],
            baseline_values=baseline[:, 1],
            log_partial_likelihood=float("nan") if ll is None else float(ll),
            feature_names=tuple(doc["feature_names"]),
            covariance=None if cov is None else np.array(cov, dtype=float),
            n_obs=int(doc.get("n_obs", 0)),
        )


def model_from_dict(doc: dict) -> AftModel | CoxModel:
    if doc.get("kind") == "cox":
        return CoxModel.from_dict(doc)
    return AftModel.from_dict(doc)


# ---------------------------------------------------------------------------
# standard error distributions on the log-time axis
#
# each returns (log f_W(z), log S_W(z)) plus the z-derivatives of both, which
# the likelihood gradient in ``fitting`` reuses.


def _gumbel(z):
    ez = np.exp(z)
    return z - ez, -ez, 1.0 - ez, -ez


def _normal(z):
    log_f = -0.5 * z * z - 0.5 * _LOG_2PI
    log_s = special.log_ndtr(-z)
    mills = np.exp(log_f - log_s)
    return log_f, log_s, -z, -mills


def _logistic(z):
    sp = np.logaddexp(0.0, z)  # log(1 + e^z)
    sig = special.expit(z)
    return z - 2.0 * sp, -sp, 1.0 - 2.0 * sig, -sig


_ERROR_DIST = {
    AftFamily.EXPONENTIAL: _gumbel,
    AftFamily.WEIBULL: _gumbel,
    AftFamily.LOG_NORMAL: _normal,
    AftFamily.LOG_LOGISTIC: _logistic,
}


def _log_gammaincc(rho, z):
    """log Q(rho, z), switching to the continued asymptotic tail on underflow."""
    rho, z = np.broadcast_arrays(np.asarray(rho, dtype=float), np.asarray(z, dtype=float))
    q = special.gammaincc(rho, z)
    with np.errstate(divide="ignore"):
        out = np.log(q)
    small = q < 1e-280
    if np.any(small):
        r, zz = rho[small], z[small]
        a = r - 1.0
        series = 1.0 + a / zz + a * (a - 1.0) / zz**2 + a * (a - 1.0) * (a - 2.0) / zz**3
        out[small] = a * np.log(zz) - zz - special.gammaln(r) + np.log(series)
    return out


def _gg_parts(rho, beta, lam, log_t, eta):
    w = math.log(lam) + log_t - eta
    y = beta * w
    z = np.exp(y)
    log_f = rho * y - z - special.gammaln(rho) + math.log(beta) - log_t
    log_s = _log_gammaincc(rho, z)
    return w, y, z, log_f, log_s


# ---------------------------------------------------------------------------
# evaluation


def _as_design(model, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    p = len(model.feature_names)
    if x.ndim == 0 and p == 1:
        x = x.reshape(1)
    if x.shape[-1:] != (p,) and not (p == 0 and x.size == 0):
        raise ContractError(f"covariate vector has shape {x.shape}; model expects {p} features")
    if p == 0:
        return np.zeros(x.shape[:-1] + (0,)) if x.ndim > 1 else np.zeros(0)
    return x


def linear_predictor(model: AftModel, x) -> np.ndarray | float:
    """theta_0 + theta . x for a single vector or each row of a matrix."""
    x = _as_design(model, x)
    eta = model.theta[0] + x @ model.theta[1:]
    return float(eta) if np.ndim(eta) == 0 else eta


def acceleration(model: AftModel, x) -> np.ndarray | float:
    """Acceleration factor exp(theta_0 + theta . x)."""
    eta = linear_predictor(model, x)
    with np.errstate(over="raise"):
        try:
            phi = np.exp(eta)
        except FloatingPointError:
            raise DomainError("acceleration factor overflows") from None
    return float(phi) if np.ndim(phi) == 0 else phi


def _check_time(t, *, allow_zero=False) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(np.isnan(t)) or np.any(t < 0) or (not allow_zero and np.any(t == 0)):
        raise DomainError("survival times must be strictly positive")
    return t


def _log_sf_pdf(family: AftFamily, shape: dict, log_t, eta):
    if family is AftFamily.GENERALIZED_GAMMA:
        _, _, _, log_f, log_s = _gg_parts(shape["rho"], shape["beta"], shape["lam"], log_t, eta)
        return log_s, log_f
    sigma = shape.get("sigma", 1.0)
    z = (log_t - eta) / sigma
    log_fw, log_sw, _, _ = _ERROR_DIST[family](z)
    return log_sw, log_fw - math.log(sigma) - log_t


def _broadcast_eval(model: AftModel, x, t):
    t = _check_time(t)
    eta = np.asarray(linear_predictor(model, x))
    with np.errstate(divide="ignore"):
        log_t = np.log(t)
    return np.broadcast_arrays(log_t, eta)


def _scalarize(a):
    return float(a) if np.ndim(a) == 0 else a


def log_survival(model: AftModel, x, t):
    log_t, eta = _broadcast_eval(model, x, t)
    log_s, _ = _log_sf_pdf(model.family, model.shape, log_t, eta)
    return _scalarize(log_s)


def log_density(model: AftModel, x, t):
    log_t, eta = _broadcast_eval(model, x, t)
    _, log_f = _log_sf_pdf(model.family, model.shape, log_t, eta)
    return _scalarize(log_f)


def survival(model: AftModel, x, t):
    """P(T > t | x).  ``x`` is one covariate vector or a matrix of rows."""
    log_t, eta = _broadcast_eval(model, x, t)
    if model.family is AftFamily.LOG_NORMAL:
        s = std_normal_cdf(-(log_t - eta) / model.shape["sigma"])
    elif model.family is AftFamily.GENERALIZED_GAMMA:
        w = math.log(model.shape["lam"]) + log_t - eta
        s = special.gammaincc(model.shape["rho"], np.exp(model.shape["beta"] * w))
    else:
        s = np.exp(_log_sf_pdf(model.family, model.shape, log_t, eta)[0])
    return _scalarize(s)


def cumulative_hazard(model: AftModel, x, t):
    return _scalarize(-np.asarray(log_survival(model, x, t)))


def density(model: AftModel, x, t):
    return _scalarize(np.exp(log_density(model, x, t)))


def hazard(model: AftModel, x, t):
    """h(t) = f(t) / S(t), formed on the log scale to survive deep tails."""
    log_t, eta = _broadcast_eval(model, x, t)
    log_s, log_f = _log_sf_pdf(model.family, model.shape, log_t, eta)
    return _scalarize(np.exp(log_f - log_s))


def baseline_survival(family: AftFamily | str, shape: dict, s):
    """S0(s): survival of the family at unit acceleration."""
    family = AftFamily.parse(family)
    s = _check_time(s)
    base = AftModel(family, np.zeros(1), shape=dict(shape))
    return survival(base, np.zeros(0), s)


def median_survival(model: AftModel, x):
    """Median survival time phi(x) * S0^{-1}(1/2)."""
    phi = np.asarray(acceleration(model, x))
    fam, shape = model.family, model.shape
    if fam is AftFamily.EXPONENTIAL:
        m0 = math.log(2.0)
    elif fam is AftFamily.WEIBULL:
        m0 = math.log(2.0) ** shape["sigma"]
    elif fam in (AftFamily.LOG_NORMAL, AftFamily.LOG_LOGISTIC):
        m0 = 1.0
    else:
        m0 = special.gammainccinv(shape["rho"], 0.5) ** (1.0 / shape["beta"]) / shape["lam"]
    return _scalarize(phi * m0)


# ---------------------------------------------------------------------------
# Cox


class CoxSurvival(NamedTuple):
    survival: np.ndarray | float
    extrapolated: bool


def cox_hazard_ratio(model: CoxModel, x):
    """exp(theta . x) relative to the baseline hazard."""
    x = _as_design(model, x)
    out = np.exp(x @ model.theta) if model.theta.size else np.ones(x.shape[:-1])
    return _scalarize(out)


def cox_baseline_cumhaz(model: CoxModel, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(model.baseline_times, t, side="right")
    values = np.concatenate([[0.0], model.baseline_values])
    return values[idx]


def cox_survival(model: CoxModel, x, t) -> CoxSurvival:
    """S(t | x) = exp(-H0(t) * exp(theta . x)) with a right-continuous step H0.

    Past the last baseline step H0 is held flat; ``extrapolated`` flags it.
    """
    t = _check_time(t, allow_zero=True)
    hr = np.asarray(cox_hazard_ratio(model, x))
    h0 = cox_baseline_cumhaz(model, t)
    last = model.baseline_times[-1] if model.baseline_times.size else 0.0
    extrapolated = bool(np.any(t > last))
    if extrapolated:
        warnings.warn("time beyond the last baseline step; cumulative hazard held flat", ExtrapolationWarning, stacklevel=2)
    return CoxSurvival(_scalarize(np.exp(-h0 * hr)), extrapolated)


def predict_survival(model: AftModel | CoxModel, x, t):
    """Survival for either model kind, without extrapolation warnings."""
    if isinstance(model, CoxModel):
        t = _check_time(t, allow_zero=True)
        return _scalarize(np.exp(-cox_baseline_cumhaz(model, t) * np.asarray(cox_hazard_ratio(model, x))))
    return survival(model, x, t)


def risk_score(model: AftModel | CoxModel, x) -> np.ndarray:
    """A survival-ordering score: larger means longer predicted survival."""
    if isinstance(model, CoxModel):
        x = _as_design(model, x)
        return -(x @ model.theta) if model.theta.size else np.zeros(x.shape[:-1])
    return np.asarray(median_survival(model, x))

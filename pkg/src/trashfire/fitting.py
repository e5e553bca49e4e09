"""Maximum-likelihood fitting for AFT families and the Cox model.

Parameter vectors are laid out as ``[theta_0, theta_1..theta_p, shapes...]``
on their natural scale; shapes are ``sigma`` for the Weibull, log-normal and
log-logistic families, nothing for the exponential, and ``(rho, beta)`` for
the generalized gamma (whose scale ``lam`` is pinned at 1 during fitting,
the intercept carries it).  The optimizer works on log-shapes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .ingest import SurvivalDataset
from .models import (
    AftFamily,
    AftModel,
    ContractError,
    CoxModel,
    DomainError,
    _ERROR_DIST,
    _log_gammaincc,
    shape_names,
)

__all__ = [
    "FitConfig",
    "FitError",
    "IdentifiabilityError",
    "ConvergenceError",
    "SeparationError",
    "OptimizeResult",
    "censored_log_likelihood",
    "log_likelihood_gradient",
    "numerical_gradient_check",
    "minimize_bfgs",
    "fit_aft",
    "fit_cox",
    "fit_families",
    "cox_log_partial_likelihood",
    "model_params",
    "n_shape_params",
]

INFEASIBLE = -np.inf


class FitError(RuntimeError):
    pass


class IdentifiabilityError(FitError):
    """The data cannot identify the model (e.g. no observed events)."""


class ConvergenceError(FitError):
    """The optimizer ran out of iterations; carries the best point found."""

    def __init__(self, message: str, best_params=None, diagnostics: dict | None = None):
        super().__init__(message)
        self.best_params = None if best_params is None else np.asarray(best_params)
        self.diagnostics = diagnostics or {}


class SeparationError(ConvergenceError):
    """A Cox coefficient diverged past ``FitConfig.divergence_bound``."""


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-7
    step_tolerance: float = 1e-9
    ridge_penalty: float = 1e-9
    initialization: str = "default"  # "default" | "zero"
    divergence_bound: float = 20.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be at least 1")
        if not (self.gradient_tolerance > 0 and self.step_tolerance > 0):
            raise ContractError("tolerances must be positive")
        if self.ridge_penalty < 0:
            raise ContractError("ridge_penalty must be non-negative")
        if self.initialization not in ("default", "zero"):
            raise ContractError(f"unknown initialization {self.initialization!r}")


def n_shape_params(family: AftFamily | str) -> int:
    family = AftFamily.parse(family)
    return {AftFamily.EXPONENTIAL: 0, AftFamily.GENERALIZED_GAMMA: 2}.get(family, 1)


def model_params(model: AftModel) -> np.ndarray:
    """Natural parameter vector of a model (the layout the likelihood takes)."""
    shapes = [model.shape[k] for k in shape_names(model.family) if k != "lam"]
    return np.concatenate([model.theta, shapes])


# ---------------------------------------------------------------------------
# likelihood


def _split(family: AftFamily, params, p: int):
    params = np.asarray(params, dtype=float).reshape(-1)
    k = n_shape_params(family)
    if params.size != p + 1 + k:
        raise ContractError(f"{family.value} with {p} features needs {p + 1 + k} parameters, got {params.size}")
    return params[0], params[1 : p + 1], params[p + 1 :]


def _loglik(family: AftFamily, params, X, log_t, events, want_grad: bool):
    """Sum of log f over events and log S over censored rows, with gradient."""
    p = X.shape[1]
    b0, beta, shapes = _split(family, params, p)
    if np.any(~(shapes > 0)) or not np.all(np.isfinite(params)):
        return INFEASIBLE, None
    eta = b0 + X @ beta if p else np.full(log_t.shape, b0)
    ev = events
    ce = ~events
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if family is AftFamily.GENERALIZED_GAMMA:
            rho, bet = shapes
            w = log_t - eta
            y = bet * w
            z = np.exp(y)
            log_f = rho * y - z - special.gammaln(rho) + math.log(bet) - log_t
            log_s = _log_gammaincc(rho, z)
            ll = log_f[ev].sum() + log_s[ce].sum()
            if not np.isfinite(ll):
                return INFEASIBLE, None
            if not want_grad:
                return float(ll), None
            d_eta = np.where(ev, -bet * (rho - z), 0.0)
            d_beta = np.where(ev, w * (rho - z) + 1.0 / bet, 0.0)
            d_rho = np.where(ev, y - special.digamma(rho), 0.0)
            if ce.any():
                mz = np.exp(rho * y[ce] - z[ce] - special.gammaln(rho) - log_s[ce])
                d_eta[ce] = mz * bet
                d_beta[ce] = -mz * w[ce]
                d_rho[ce] = _dlogq_drho(rho, z[ce])
            grad_shape = np.array([d_rho.sum(), d_beta.sum()])
        else:
            sigma = shapes[0] if shapes.size else 1.0
            zz = (log_t - eta) / sigma
            log_fw, log_sw, g_f, g_s = _ERROR_DIST[family](zz)
            term = np.where(ev, log_fw - math.log(sigma) - log_t, log_sw)
            ll = term.sum()
            if not np.isfinite(ll):
                return INFEASIBLE, None
            if not want_grad:
                return float(ll), None
            g = np.where(ev, g_f, g_s)
            d_eta = -g / sigma
            grad_shape = np.array([np.sum(-(g * zz + ev) / sigma)]) if shapes.size else np.zeros(0)
    grad = np.concatenate([[d_eta.sum()], X.T @ d_eta if p else np.zeros(0), grad_shape])
    return float(ll), grad


def _dlogq_drho(rho: float, z: np.ndarray) -> np.ndarray:
    # five-point stencil; gammaincc has no closed-form shape derivative
    h = 1e-3 * rho
    f = lambda r: _log_gammaincc(r, z)  # noqa: E731
    return (f(rho - 2 * h) - 8 * f(rho - h) + 8 * f(rho + h) - f(rho + 2 * h)) / (12 * h)


def _prepare(dataset: SurvivalDataset):
    if len(dataset) == 0:
        raise ContractError("dataset is empty")
    return dataset.design, np.log(dataset.times), dataset.events


def censored_log_likelihood(family: AftFamily | str, params, dataset: SurvivalDataset) -> float:
    """Right-censored log-likelihood: sum log f(t|x) over events + log S(t|x) over censored.

    Infeasible parameters (a non-positive shape, or a likelihood that is not
    finite) return ``-inf`` rather than raising, so a line search can reject
    the step.
    """
    family = AftFamily.parse(family)
    X, log_t, events = _prepare(dataset)
    return _loglik(family, params, X, log_t, events, want_grad=False)[0]


def log_likelihood_gradient(family: AftFamily | str, params, dataset: SurvivalDataset) -> np.ndarray:
    """Gradient of :func:`censored_log_likelihood` in the natural parameters."""
    family = AftFamily.parse(family)
    X, log_t, events = _prepare(dataset)
    ll, grad = _loglik(family, params, X, log_t, events, want_grad=True)
    if grad is None:
        raise DomainError("gradient requested at an infeasible parameter point")
    return grad


def numerical_gradient_check(family: AftFamily | str, params, dataset: SurvivalDataset, h: float = 1e-5) -> float:
    """Max deviation between the analytic and central-difference gradients.

    Each coordinate's deviation is divided by ``max(|analytic|, 1)`` so
    coordinates near a stationary point are compared absolutely.
    """
    if not h > 0:
        raise DomainError("finite-difference step must be positive")
    family = AftFamily.parse(family)
    params = np.asarray(params, dtype=float)
    analytic = log_likelihood_gradient(family, params, dataset)
    worst = 0.0
    for j in range(params.size):
        step = h * max(1.0, abs(params[j]))
        up, down = params.copy(), params.copy()
        up[j] += step
        down[j] -= step
        numeric = (censored_log_likelihood(family, up, dataset) - censored_log_likelihood(family, down, dataset)) / (
            2 * step
        )
        worst = max(worst, abs(numeric - analytic[j]) / max(abs(analytic[j]), 1.0))
    return worst


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    reason: str  # "gradient" | "step"
    trace: list = field(default_factory=list)


def minimize_bfgs(fun_grad, x0, config: FitConfig, guard=None) -> OptimizeResult:
    """BFGS with Armijo backtracking on a smooth objective.

    ``fun_grad(x)`` returns ``(f, g)`` with ``f = inf`` for infeasible points.
    Stops when ``max|g| <= gradient_tolerance`` or the accepted step is no
    larger than ``step_tolerance`` in every coordinate.  ``guard(x)`` may raise
    to abort (used for divergence checks).
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise DomainError("objective is infeasible at the starting point")
    n = x.size
    H = np.eye(n)
    trace = [f]
    first = True
    for it in range(config.max_iterations):
        if n == 0 or np.max(np.abs(g)) <= config.gradient_tolerance:
            return OptimizeResult(x, f, g, it, "gradient", trace)
        d = -H @ g
        slope = g @ d
        if not slope < 0:
            H = np.eye(n)
            d, slope = -g, -(g @ g)
        biggest = np.max(np.abs(d))
        if biggest > 5.0:
            d *= 5.0 / biggest
            slope = g @ d
        alpha = 1.0
        noise = 1e-12 * max(1.0, abs(f))
        accepted = False
        while alpha * np.max(np.abs(d)) > 1e-3 * config.step_tolerance:
            x_new = x + alpha * d
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new):
                if f_new <= f + 1e-4 * alpha * slope:
                    accepted = True
                elif abs(f_new - f) <= noise and np.max(np.abs(g_new)) < np.max(np.abs(g)):
                    # decrease is below round-off; judge progress by the gradient
                    accepted = True
            if accepted:
                break
            alpha *= 0.5
        if not accepted:
            if not np.allclose(H, np.eye(n)):
                H = np.eye(n)
                continue
            return OptimizeResult(x, f, g, it, "step", trace)
        s = x_new - x
        yv = g_new - g
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        if guard is not None:
            guard(x)
        if np.max(np.abs(g)) <= config.gradient_tolerance:
            return OptimizeResult(x, f, g, it + 1, "gradient", trace)
        if np.max(np.abs(s)) <= config.step_tolerance:
            return OptimizeResult(x, f, g, it + 1, "step", trace)
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if first:
                H = np.eye(n) * (sy / (yv @ yv))
                first = False
            rho_ = 1.0 / sy
            Hy = H @ yv
            H = H - rho_ * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho_ * rho_ * (yv @ Hy) + rho_) * np.outer(s, s)
    raise ConvergenceError(
        f"no convergence within {config.max_iterations} iterations",
        best_params=x,
        diagnostics={"objective": f, "max_abs_gradient": float(np.max(np.abs(g))), "iterations": config.max_iterations},
    )


# ---------------------------------------------------------------------------
# AFT


def _initial_params(family: AftFamily, dataset: SurvivalDataset, config: FitConfig) -> np.ndarray:
    p = dataset.design.shape[1]
    b0 = math.log(float(np.mean(dataset.times))) if config.initialization == "default" else 0.0
    shapes = {AftFamily.EXPONENTIAL: [], AftFamily.GENERALIZED_GAMMA: [1.0, 1.0]}.get(family, [1.0])
    return np.concatenate([[b0], np.zeros(p), shapes])


def _gg_natural(u: np.ndarray, p: int):
    """Map internal generalized-gamma coordinates to natural ones.

    Internally the family is fitted as ``(location, log sigma, log Q)`` with
    ``rho = 1/Q**2``, ``beta = Q/sigma`` and intercept
    ``theta_0 = location + 2 sigma log(Q) / Q``.  The log-normal limit is
    ``Q -> 0`` at finite location, where the natural ``(rho, theta_0)``
    run off to infinity.  Returns the natural vector and its Jacobian.
    """
    log_sigma, log_q = u[p + 1], u[p + 2]
    sigma, q = math.exp(log_sigma), math.exp(log_q)
    natural = np.concatenate([u[: p + 1], [1.0 / (q * q), q / sigma]])
    natural[0] += 2.0 * sigma * log_q / q
    jac = np.zeros((p + 3, p + 3))
    jac[: p + 1, : p + 1] = np.eye(p + 1)
    jac[0, p + 1] = 2.0 * sigma * log_q / q
    jac[0, p + 2] = 2.0 * sigma * (1.0 - log_q) / q
    jac[p + 1, p + 2] = -2.0 / (q * q)
    jac[p + 2, p + 1] = -q / sigma
    jac[p + 2, p + 2] = q / sigma
    return natural, jac


def _information_inverse(hess: np.ndarray) -> np.ndarray | None:
    """Invert an observed information matrix, leaving NaN for null directions."""
    k = hess.shape[0]
    cov = np.full((k, k), np.nan)
    scale = np.max(np.abs(hess)) if hess.size else 0.0
    if not scale > 0 or not np.all(np.isfinite(hess)):
        return None
    keep = np.max(np.abs(hess), axis=1) > 1e-10 * scale
    sub = hess[np.ix_(keep, keep)]
    try:
        chol = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        return None
    inv_chol = np.linalg.inv(chol)
    cov[np.ix_(keep, keep)] = inv_chol.T @ inv_chol
    return cov


def _aft_covariance(family: AftFamily, params: np.ndarray, X, log_t, events) -> np.ndarray | None:
    k = params.size
    hess = np.empty((k, k))
    for j in range(k):
        step = 1e-5 * max(1.0, abs(params[j]))
        up, down = params.copy(), params.copy()
        up[j] += step
        down[j] -= step
        g_up = _loglik(family, up, X, log_t, events, True)[1]
        g_down = _loglik(family, down, X, log_t, events, True)[1]
        if g_up is None or g_down is None:
            return None
        hess[:, j] = -(g_up - g_down) / (2 * step)
    return _information_inverse(0.5 * (hess + hess.T))


def fit_aft(family: AftFamily | str, train: SurvivalDataset, config: FitConfig | None = None) -> AftModel:
    """Fit an AFT family by right-censored maximum likelihood."""
    family = AftFamily.parse(family)
    config = config or FitConfig()
    if train.n_events == 0:
        raise IdentifiabilityError("no observed events: the time scale is not identifiable from censored data alone")
    X, log_t, events = _prepare(train)
    p = X.shape[1]
    k = n_shape_params(family)
    gamma = family is AftFamily.GENERALIZED_GAMMA

    def to_natural(u):
        if gamma:
            return _gg_natural(u, p)[0]
        return np.concatenate([u[: p + 1], np.exp(u[p + 1 :])])

    def fun_grad(u):
        if gamma:
            params, jac = _gg_natural(u, p)
        else:
            params = to_natural(u)
        ll, grad = _loglik(family, params, X, log_t, events, want_grad=True)
        if grad is None:
            return np.inf, np.full(u.shape, np.nan)
        coef = u[1 : p + 1]
        f = -ll + 0.5 * config.ridge_penalty * (coef @ coef)
        if gamma:
            gu = -(jac.T @ grad)
        else:
            gu = -grad
            gu[p + 1 :] *= params[p + 1 :]  # chain rule through exp
        gu[1 : p + 1] += config.ridge_penalty * coef
        return f, gu

    start = _initial_params(family, train, config)
    if gamma:
        # Weibull embedding: Q = 1 (rho = 1), sigma = 1 / beta, location = intercept
        u0 = np.concatenate([start[: p + 1], [-math.log(start[p + 2]), 0.0]])
    else:
        u0 = np.concatenate([start[: p + 1], np.log(start[p + 1 :])])
    result = minimize_bfgs(fun_grad, u0, config)
    params = to_natural(result.x)
    ll = censored_log_likelihood(family, params, train)
    names = [n for n in shape_names(family) if n != "lam"]
    shape = dict(zip(names, params[p + 1 :].tolist()))
    model = AftModel(
        family=family,
        theta=params[: p + 1],
        shape=shape,
        log_likelihood=ll,
        n_params=p + 1 + k,
        feature_names=train.feature_names,
        covariance=_aft_covariance(family, params, X, log_t, events),
        n_obs=len(train),
    )
    object.__setattr__(model, "fit_result", result)
    return model


# ---------------------------------------------------------------------------
# Cox


def _cox_sorted(dataset: SurvivalDataset):
    order = np.argsort(dataset.times, kind="stable")
    t = dataset.times[order]
    d = dataset.events[order]
    X = dataset.design[order]
    first = np.searchsorted(t, t, side="left")  # start of each row's risk set
    return t, d, X, first


def _cox_terms(theta, X, d, first, want_hess=False):
    eta = X @ theta if theta.size else np.zeros(X.shape[0])
    c = np.max(eta) if eta.size else 0.0
    r = np.exp(eta - c)
    s0 = np.cumsum(r[::-1])[::-1][first]
    ll = float(np.sum((eta - c - np.log(s0))[d]))
    rX = r[:, None] * X
    s1 = np.cumsum(rX[::-1], axis=0)[::-1][first]
    mean_x = s1 / s0[:, None]
    grad = np.sum((X - mean_x)[d], axis=0)
    if not want_hess:
        return ll, grad, None
    s2 = np.cumsum((rX[:, :, None] * X[:, None, :])[::-1], axis=0)[::-1][first]
    per = s2 / s0[:, None, None] - mean_x[:, :, None] * mean_x[:, None, :]
    return ll, grad, np.sum(per[d], axis=0)


def cox_log_partial_likelihood(theta, dataset: SurvivalDataset) -> float:
    """Breslow log partial likelihood at ``theta``."""
    t, d, X, first = _cox_sorted(dataset)
    return _cox_terms(np.asarray(theta, dtype=float), X, d, first)[0]


def _breslow(theta, t, d, X):
    eta = X @ theta if theta.size else np.zeros(t.size)
    r = np.exp(eta)
    risk = np.cumsum(r[::-1])[::-1]
    event_times, deaths = np.unique(t[d], return_counts=True)
    first = np.searchsorted(t, event_times, side="left")
    increments = deaths / risk[first]
    return event_times, np.cumsum(increments)


def fit_cox(train: SurvivalDataset, config: FitConfig | None = None) -> CoxModel:
    """Cox model by Breslow partial likelihood; baseline by the Breslow estimator."""
    config = config or FitConfig()
    if train.n_events == 0:
        raise IdentifiabilityError("no observed events")
    t, d, X, first = _cox_sorted(train)
    p = X.shape[1]

    def fun_grad(theta):
        ll, grad, _ = _cox_terms(theta, X, d, first)
        return -ll + 0.5 * config.ridge_penalty * (theta @ theta), -grad + config.ridge_penalty * theta

    def guard(theta):
        if theta.size and np.max(np.abs(theta)) > config.divergence_bound:
            j = int(np.argmax(np.abs(theta)))
            raise SeparationError(
                f"coefficient for {train.feature_names[j]!r} exceeded {config.divergence_bound}: "
                "the covariate likely separates the event order",
                best_params=theta,
                diagnostics={"feature": train.feature_names[j], "value": float(theta[j])},
            )

    result = minimize_bfgs(fun_grad, np.zeros(p), config, guard=guard)
    theta = result.x
    ll, _, hess = _cox_terms(theta, X, d, first, want_hess=True)
    if p and ll > -1e-6:
        # the fitted order explains every event with probability ~1: the
        # supremum sits at infinity even if the gradient has already flattened
        j = int(np.argmax(np.abs(theta)))
        raise SeparationError(
            f"partial likelihood reached {math.exp(ll):.9f}; a covariate separates the event order",
            best_params=theta,
            diagnostics={"feature": train.feature_names[j], "value": float(theta[j]), "log_partial_likelihood": ll},
        )
    times, values = _breslow(theta, t, d, X)
    model = CoxModel(
        theta=theta,
        baseline_times=times,
        baseline_values=values,
        log_partial_likelihood=ll,
        feature_names=train.feature_names,
        covariance=_information_inverse(hess) if p else None,
        n_obs=len(train),
    )
    object.__setattr__(model, "fit_result", result)
    return model


# ---------------------------------------------------------------------------


def _worker_count(max_workers: int | None) -> int:
    if max_workers is not None:
        return max(1, int(max_workers))
    env = os.environ.get("TRASHFIRE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ContractError(f"TRASHFIRE_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def fit_families(families, train: SurvivalDataset, config: FitConfig | None = None, max_workers: int | None = None):
    """Fit several families (``"cox"`` allowed) concurrently; returns ``{name: model}``.

    Worker count defaults to ``TRASHFIRE_THREADS`` or the core count.
    """
    names = [f.value if isinstance(f, AftFamily) else str(f) for f in families]

    def one(name):
        return fit_cox(train, config) if name == "cox" else fit_aft(name, train, config)

    with ThreadPoolExecutor(max_workers=_worker_count(max_workers)) as pool:
        models = list(pool.map(one, names))
    return dict(zip(names, models))

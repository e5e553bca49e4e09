"""Failure rates, expected survival time and the TRASH score.

The TRASH score divides the per-sample training time by the expected time
an attacker needs to induce a failure within the perturbation budget:

    score = t_train / E[T | 0 < eps <= eps*],   E[T] = integral_0^t* S(u) du

A score above 1 means attacking the model is cheaper than training it; the
model is reported as broken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .ingest import CATEGORICAL, SurvivalDataset
from .models import (
    AftModel,
    ContractError,
    CoxModel,
    DomainError,
    cox_baseline_cumhaz,
    cox_hazard_ratio,
    median_survival,
    survival,
)

__all__ = [
    "CostModel",
    "TrashReport",
    "EmptySubsetError",
    "accuracy",
    "failure_rate",
    "training_cost",
    "attack_cost",
    "expected_survival",
    "trash_score",
    "conditional_subset",
    "mean_profile",
    "trash_analysis",
]


class EmptySubsetError(ValueError):
    """No records satisfy the perturbation-budget condition."""


@dataclass(frozen=True)
class CostModel:
    c_h: float
    n_train: int
    n_attack: int

    def __post_init__(self):
        if not (self.c_h > 0 and self.n_train > 0 and self.n_attack > 0):
            raise DomainError("hardware cost and sample counts must be positive")


@dataclass(frozen=True)
class TrashReport:
    t_train: float
    expected_survival: float
    trash_score: float
    verdict: str  # "broken" | "not-broken"
    horizon: float | None = None

    @property
    def broken(self) -> bool:
        return self.verdict == "broken"

    def to_dict(self) -> dict:
        return {
            "t_train": self.t_train,
            "expected_survival": self.expected_survival,
            "trash_score": self.trash_score,
            "verdict": self.verdict,
            "horizon": self.horizon,
        }


def accuracy(false_count: int, n: int) -> float:
    if n < 1 or not 0 <= false_count <= n:
        raise DomainError("need n >= 1 and 0 <= false_count <= n")
    return 1.0 - false_count / n


def failure_rate(false_count: int, dt: float) -> float:
    """Misclassifications per second over an interval of ``dt`` seconds."""
    if not dt > 0:
        raise DomainError("time interval must be positive")
    if false_count < 0:
        raise DomainError("false_count must be non-negative")
    return false_count / dt


def training_cost(cost: CostModel, t_train: float) -> float:
    return cost.c_h * t_train * cost.n_train


def attack_cost(cost: CostModel, t_attack: float) -> float:
    return cost.c_h * t_attack * cost.n_attack


def _cox_expected(model: CoxModel, x, t_star: float) -> float:
    # exact integral of a step function
    hr = float(cox_hazard_ratio(model, x))
    knots = model.baseline_times[model.baseline_times < t_star]
    edges = np.concatenate([[0.0], knots, [t_star]])
    levels = np.exp(-cox_baseline_cumhaz(model, edges[:-1]) * hr)
    if math.isinf(t_star):
        tail = levels[-1]
        if tail > 0:
            return math.inf
        return float(np.sum(levels[:-1] * np.diff(edges[:-1])))
    return float(np.sum(levels * np.diff(edges)))


def expected_survival(model: AftModel | CoxModel, x, t_star: float) -> float:
    """Restricted mean survival time, the integral of S(u | x) over (0, t_star].

    AFT models use adaptive Gauss-Kronrod quadrature with absolute error
    at most ``1e-6 * t_star`` (``t_star`` may be ``inf``); Cox models
    integrate their step function exactly.
    """
    if not t_star > 0:
        raise DomainError("t_star must be positive")
    if isinstance(model, CoxModel):
        return _cox_expected(model, x, t_star)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractError("expected_survival takes one covariate vector")

    def sf(u):
        if u <= 0:
            return 1.0
        value = survival(model, x, u)
        if not math.isfinite(value):
            raise FloatingPointError(f"survival evaluated to {value!r} at u={u!r}")
        return value

    tol = 1e-9 * (1.0 if math.isinf(t_star) else t_star)
    # breakpoint at the median keeps quad from stepping over the bulk of the mass
    med = float(median_survival(model, x))
    if math.isinf(t_star):
        head, err1 = integrate.quad(sf, 0.0, med, epsabs=tol, epsrel=1e-12, limit=200)
        tail, err2 = integrate.quad(sf, med, math.inf, epsabs=tol, epsrel=1e-12, limit=200)
        return head + tail
    points = [med] if 0 < med < t_star else None
    value, err = integrate.quad(sf, 0.0, t_star, epsabs=tol, epsrel=1e-12, limit=500, points=points)
    return float(min(max(value, 0.0), t_star))


def trash_score(t_train: float, expected_survival: float, horizon: float | None = None) -> TrashReport:
    """Score = t_train / E[T]; broken iff strictly greater than 1."""
    if not (t_train > 0 and expected_survival > 0):
        raise DomainError("t_train and expected survival must be positive")
    score = t_train / expected_survival
    return TrashReport(t_train, expected_survival, score, "broken" if score > 1 else "not-broken", horizon)


def conditional_subset(dataset: SurvivalDataset, epsilon_max: float) -> SurvivalDataset:
    """Rows whose raw attack strength lies in (0, epsilon_max]."""
    if not epsilon_max > 0:
        raise DomainError("epsilon_max must be positive")
    if dataset.records is None:
        raise ContractError("dataset carries no raw records to condition on")
    strength = np.array([r.attack_strength for r in dataset.records], dtype=float)
    mask = (strength > 0) & (strength <= epsilon_max)
    if not mask.any():
        raise EmptySubsetError(f"no records with attack strength in (0, {epsilon_max}]")
    return dataset.subset(mask)


def mean_profile(dataset: SurvivalDataset) -> np.ndarray:
    """Column means, with dummy columns held at their reference level (0)."""
    profile = dataset.design.mean(axis=0) if len(dataset) else np.zeros(dataset.design.shape[1])
    for j, name in enumerate(dataset.feature_names):
        if any(name.startswith(f"{col}[") for col in CATEGORICAL) and dataset.encoding_meta is not None:
            profile[j] = 0.0
    return profile


def trash_analysis(
    model: AftModel | CoxModel,
    dataset: SurvivalDataset,
    epsilon_max: float = math.inf,
    t_train: float | None = None,
    profile=None,
    t_star: float | None = None,
) -> TrashReport:
    """Condition on the budget, integrate survival at a covariate profile, score.

    Defaults: ``t_train`` is the mean logged training time of the subset,
    ``profile`` is :func:`mean_profile` of the subset, and ``t_star`` the
    latest observed time in the subset.
    """
    subset = conditional_subset(dataset, epsilon_max)
    if t_train is None:
        t_train = float(np.mean([r.t_train for r in subset.records]))
    x = mean_profile(subset) if profile is None else np.asarray(profile, dtype=float)
    horizon = float(np.max(subset.times)) if t_star is None else float(t_star)
    return trash_score(t_train, expected_survival(model, x, horizon), horizon)

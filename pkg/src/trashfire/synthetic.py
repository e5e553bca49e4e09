"""Experiment logs with a known survival structure.

Times are drawn by inverse transform: with ``u ~ U(0, 1)`` the attack time
solves ``S0(t / phi(x)) = u``.  Covariates are drawn first, then one uniform
per record, so two specs that differ only in family (and share a seed) use
the same uniform stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .ingest import CATEGORICAL, CSV_COLUMNS, ExperimentRecord
from .models import AftFamily, AftModel, DomainError, baseline_survival, shape_names

__all__ = ["GeneratorSpec", "generate", "generate_arrays", "inverse_transform", "censor"]

DEFAULTS = {
    "dataset": "mnist",
    "attack": "fgm",
    "attack_strength": 1.0,
    "defence": "control",
    "defence_strength": 0.0,
    "layers": 18,
    "epochs": 20,
    "t_train": 0.004,
    "t_predict": 0.0002,
    "acc_ben": 0.98,
    "acc_adv": 0.22,
}
_INTEGER = ("layers", "epochs")


@dataclass
class GeneratorSpec:
    """What to simulate.

    ``covariate_distributions`` maps a log column to a sampler: ``{"uniform": [lo, hi]}``,
    ``{"choice": [v, ...]}``, ``{"levels": {name: weight, ...}}`` or
    ``{"constant": v}``.  Unlisted columns take :data:`DEFAULTS`.
    ``true_theta`` is keyed by numeric column (applied to the raw value), by
    ``"column[level]"`` indicators, or by ``"intercept"`` (added to the
    ``intercept`` field).  ``censoring_rule`` is ``None``,
    ``{"budget": seconds}`` or ``{"quantile": q}`` (censor the slowest
    fraction ``q``).
    """

    family: str = "exponential"
    intercept: float = 0.0
    true_theta: dict = field(default_factory=dict)
    true_shape: dict = field(default_factory=dict)
    covariate_distributions: dict = field(default_factory=dict)
    censoring_rule: dict | None = None
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.family = AftFamily.parse(self.family).value
        if self.n < 1:
            raise ValueError("n must be at least 1")
        # validates the shape parameters
        AftModel(self.family, [self.intercept], shape=dict(self.true_shape))
        if self.censoring_rule is not None:
            if set(self.censoring_rule) == {"budget"}:
                if not self.censoring_rule["budget"] > 0:
                    raise ValueError("censoring budget must be positive")
            elif set(self.censoring_rule) == {"quantile"}:
                if not 0.0 < self.censoring_rule["quantile"] < 1.0:
                    raise ValueError("censoring quantile must lie in (0, 1)")
            else:
                raise ValueError(f"unknown censoring rule {self.censoring_rule!r}")
        for col in self.covariate_distributions:
            if col not in DEFAULTS:
                raise ValueError(f"cannot sample column {col!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown generator fields {sorted(extra)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def inverse_transform(family: AftFamily | str, phi, shape: dict, u):
    """Solve ``S0(t / phi) = u`` for ``t``.

    Exponential, Weibull and log-logistic invert in closed form; log-normal
    and generalized gamma use bisection on ``log t`` to 1e-12 in ``u``.
    """
    family = AftFamily.parse(family)
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("u must lie strictly inside (0, 1)")
    phi = np.asarray(phi, dtype=float)
    if family is AftFamily.EXPONENTIAL:
        s = -np.log(u)
    elif family is AftFamily.WEIBULL:
        s = (-np.log(u)) ** shape["sigma"]
    elif family is AftFamily.LOG_LOGISTIC:
        s = ((1.0 - u) / u) ** shape["sigma"]
    else:
        s = _bisect_baseline(family, shape, u)
    t = phi * s
    return float(t) if np.ndim(t) == 0 else t


def _bisect_baseline(family: AftFamily, shape: dict, u: np.ndarray) -> np.ndarray:
    shape = {k: shape[k] for k in shape_names(family) if k in shape}

    def sf(y):
        return np.asarray(baseline_survival(family, shape, np.exp(y)))

    u = np.atleast_1d(u)
    lo = np.full(u.shape, -1.0)
    hi = np.full(u.shape, 1.0)
    width = 2.0
    for _ in range(64):
        need = sf(lo) < u
        if not need.any():
            break
        lo[need] -= width
        width *= 2.0
    width = 2.0
    for _ in range(64):
        need = sf(hi) > u
        if not need.any():
            break
        hi[need] += width
        width *= 2.0
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = sf(mid)
        above = s > u
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(np.abs(s - u) <= 1e-12) or np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
            break
    return np.exp(mid)


def censor(times: np.ndarray, censoring: dict | None) -> tuple[np.ndarray, np.ndarray]:
    """Apply a budget or quantile rule; returns ``(observed, event)``."""
    times = np.asarray(times, dtype=float)
    if censoring is None:
        return times.copy(), np.ones(times.shape, dtype=bool)
    if "budget" in censoring:
        budget = float(censoring["budget"])
    else:
        budget = float(np.quantile(times, 1.0 - censoring["quantile"]))
    event = times <= budget
    return np.where(event, times, budget), event


def generate_arrays(
    family,
    intercept: float,
    coefficients,
    shape: dict,
    design: np.ndarray,
    seed: int | np.random.Generator = 0,
    censoring: dict | None = None,
):
    """Draw ``(times, events)`` for a given design matrix."""
    rng = np.random.default_rng(seed)
    design = np.asarray(design, dtype=float)
    eta = intercept + design @ np.asarray(coefficients, dtype=float)
    u = _uniforms(rng, design.shape[0])
    return censor(inverse_transform(family, np.exp(eta), shape, u), censoring)


def _uniforms(rng: np.random.Generator, n: int) -> np.ndarray:
    u = rng.random(n)
    return np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)


def _sample_column(rng, col: str, sampler: dict, n: int) -> np.ndarray:
    (kind, arg), = sampler.items()
    if kind == "constant":
        return np.full(n, arg, dtype=object)
    if kind == "uniform":
        lo, hi = arg
        values = rng.uniform(lo, hi, n)
        return np.rint(values).astype(int) if col in _INTEGER else values
    if kind == "choice":
        return np.asarray(arg, dtype=object)[rng.integers(0, len(arg), n)]
    if kind == "levels":
        names = sorted(arg)
        weights = np.array([arg[k] for k in names], dtype=float)
        return np.asarray(names, dtype=object)[rng.choice(len(names), size=n, p=weights / weights.sum())]
    raise ValueError(f"unknown sampler {kind!r} for column {col!r}")


def generate(spec: GeneratorSpec) -> list[ExperimentRecord]:
    """Simulate a log; deterministic under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    columns = {}
    for col in CSV_COLUMNS:
        if col in ("t_attack", "event"):
            continue
        if col in spec.covariate_distributions:
            columns[col] = _sample_column(rng, col, spec.covariate_distributions[col], n)
        else:
            columns[col] = np.full(n, DEFAULTS[col], dtype=object)
    eta = np.full(n, float(spec.intercept))
    for key, coef in spec.true_theta.items():
        if key == "intercept":
            eta += coef
        elif "[" in key:
            col, level = key[:-1].split("[", 1)
            if col not in CATEGORICAL or not key.endswith("]"):
                raise ValueError(f"bad indicator coefficient {key!r}")
            eta += coef * (columns[col] == level)
        elif key in columns and key not in CATEGORICAL:
            eta += coef * columns[key].astype(float)
        else:
            raise ValueError(f"coefficient {key!r} names no numeric column")
    u = _uniforms(rng, n)
    raw = inverse_transform(spec.family, np.exp(eta), spec.true_shape, u)
    times, events = censor(np.atleast_1d(raw), spec.censoring_rule)
    records = []
    for i in range(n):
        records.append(
            ExperimentRecord(
                dataset_name=str(columns["dataset"][i]),
                attack_name=str(columns["attack"][i]),
                attack_strength=float(columns["attack_strength"][i]),
                defence_name=str(columns["defence"][i]),
                defence_strength=float(columns["defence_strength"][i]),
                layers=int(columns["layers"][i]),
                epochs=int(columns["epochs"][i]),
                t_train=float(columns["t_train"][i]),
                t_predict=float(columns["t_predict"][i]),
                t_attack=float(times[i]),
                event=bool(events[i]),
                acc_ben=float(columns["acc_ben"][i]),
                acc_adv=float(columns["acc_adv"][i]),
            )
        )
    for r in records:
        r.validate()
    return records


def population_mean(family, phi: float, shape: dict) -> float:
    """Untruncated mean survival time, used to set up demo specs."""
    family = AftFamily.parse(family)
    if family is AftFamily.EXPONENTIAL:
        return phi
    if family is AftFamily.WEIBULL:
        return phi * math.gamma(1.0 + shape["sigma"])
    if family is AftFamily.LOG_NORMAL:
        return phi * math.exp(0.5 * shape["sigma"] ** 2)
    if family is AftFamily.LOG_LOGISTIC:
        sigma = shape["sigma"]
        if sigma >= 1:
            return math.inf
        return phi * math.pi * sigma / math.sin(math.pi * sigma)
    rho, beta, lam = shape["rho"], shape["beta"], shape.get("lam", 1.0)
    return phi / lam * math.exp(special.gammaln(rho + 1.0 / beta) - special.gammaln(rho))

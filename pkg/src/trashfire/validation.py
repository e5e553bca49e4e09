"""Model selection and calibration metrics.

Concordance is Harrell's C on a survival-ordering score (predicted median
survival for AFT models, the negated linear predictor for Cox).  Calibration
at a horizon ``t*`` regresses the observed at-horizon failure indicator on a
restricted cubic spline of logit(predicted failure probability); ICI is the
mean absolute gap between predicted and smoothed-observed probabilities and
E50 the gap at the median predicted probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .ingest import SurvivalDataset
from .models import AftModel, ContractError, CoxModel, predict_survival, risk_score

__all__ = [
    "MetricError",
    "ValidationReport",
    "CalibrationCurve",
    "aic",
    "bic",
    "concordance",
    "concordance_pairs",
    "concordance_bruteforce",
    "calibration_curve",
    "ici_and_e50",
    "rcs_basis",
    "default_horizon",
    "validate",
]


class MetricError(ValueError):
    """A metric is undefined on the supplied data."""


def aic(model) -> float:
    return 2.0 * model.n_params - 2.0 * model.log_likelihood


def bic(model, n: int) -> float:
    if n < 1:
        raise ContractError("BIC needs at least one observation")
    return model.n_params * math.log(n) - 2.0 * model.log_likelihood


# ---------------------------------------------------------------------------
# concordance


def _comparable(ti, tj, ei, ej):
    # i "fails first" and that failure was observed
    return ei & ((ti < tj) | ((ti == tj) & ~ej))


def concordance_bruteforce(scores, times, events) -> tuple[int, int, int]:
    """O(n^2) enumeration -> (concordant, tied_score, comparable) pair counts.

    Every ordered pair is visited (one row against all others at a time).
    """
    scores = np.asarray(scores, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    conc = tied = total = 0
    others = np.ones(times.size, dtype=bool)
    for i in range(times.size):
        others[i] = False
        ok = others & _comparable(times[i], times, events[i], events)
        others[i] = True
        total += int(ok.sum())
        conc += int((ok & (scores[i] < scores)).sum())
        tied += int((ok & (scores[i] == scores)).sum())
    return conc, tied, total


class _Fenwick:
    def __init__(self, n: int):
        self.tree = np.zeros(n + 1, dtype=np.int64)

    def add(self, i: int) -> None:
        i += 1
        while i < self.tree.size:
            self.tree[i] += 1
            i += i & -i

    def prefix(self, i: int) -> int:
        # number of inserted ranks < i
        total = 0
        while i > 0:
            total += self.tree[i]
            i -= i & -i
        return int(total)


def concordance_pairs(scores, times, events) -> tuple[int, int, int]:
    """Same counts as :func:`concordance_bruteforce` in O(n log n).

    Sweeps times from largest to smallest, keeping a Fenwick tree over score
    ranks of the rows that outlive the current time.  Censored rows tied at
    the current time join before the events of that time are queried.
    """
    scores = np.asarray(scores, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if not (scores.shape == times.shape == events.shape):
        raise ContractError("scores, times and events must have equal length")
    uniq, rank = np.unique(scores, return_inverse=True)
    tree = _Fenwick(uniq.size)
    order = np.lexsort((events, -times))
    conc = tied = total = 0
    inserted = 0
    k = 0
    n = times.size
    while k < n:
        t = times[order[k]]
        group_end = k
        while group_end < n and times[order[group_end]] == t:
            group_end += 1
        group = order[k:group_end]
        censored = group[~events[group]]
        failed = group[events[group]]
        for i in censored:
            tree.add(rank[i])
            inserted += 1
        for i in failed:
            below = tree.prefix(rank[i])
            not_above = tree.prefix(rank[i] + 1)
            total += inserted
            tied += not_above - below
            conc += inserted - not_above
        for i in failed:
            tree.add(rank[i])
            inserted += 1
        k = group_end
    return conc, tied, total


def concordance(predicted_scores, times, events) -> float:
    """Harrell's C; larger scores should mean longer survival.

    A pair is comparable when the earlier time is an observed event (a
    censored row tied with an event counts as outliving it); score ties
    count one half.
    """
    conc, tied, total = concordance_pairs(predicted_scores, times, events)
    if total == 0:
        raise MetricError("no comparable pairs")
    return (2 * conc + tied) / (2 * total)


# ---------------------------------------------------------------------------
# calibration


def rcs_basis(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Restricted cubic spline basis (linear beyond the outer knots), with intercept."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(knots, dtype=float)
    cols = [np.ones_like(x), x]
    norm = (k[-1] - k[0]) ** 2
    tail = k[-1] - k[-2]
    cube = lambda v: np.maximum(v, 0.0) ** 3  # noqa: E731
    for j in range(k.size - 2):
        term = (
            cube(x - k[j])
            - cube(x - k[-2]) * (k[-1] - k[j]) / tail
            + cube(x - k[-1]) * (k[-2] - k[j]) / tail
        )
        cols.append(term / norm)
    return np.column_stack(cols)


@dataclass
class CalibrationCurve:
    """Per-record (predicted, smoothed observed) failure probabilities at ``horizon``."""

    predicted: np.ndarray
    observed: np.ndarray
    horizon: float
    n_excluded: int = 0
    knots: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __iter__(self):
        return iter(zip(self.predicted.tolist(), self.observed.tolist()))

    def __len__(self):
        return int(self.predicted.size)

    def pairs(self) -> list[tuple[float, float]]:
        return list(self)


_KNOT_QUANTILES = {
    3: (0.10, 0.50, 0.90),
    4: (0.05, 0.35, 0.65, 0.95),
    5: (0.05, 0.275, 0.50, 0.725, 0.95),
    6: (0.05, 0.23, 0.41, 0.59, 0.77, 0.95),
    7: (0.025, 0.1833, 0.3417, 0.50, 0.6583, 0.8167, 0.975),
}


def _knot_quantiles(knots: int) -> np.ndarray:
    if knots in _KNOT_QUANTILES:
        return np.array(_KNOT_QUANTILES[knots])
    return np.linspace(0.05, 0.95, knots)


def predicted_failure(model: AftModel | CoxModel, design: np.ndarray, horizon: float) -> np.ndarray:
    return 1.0 - np.asarray(predict_survival(model, design, horizon), dtype=float)


def calibration_curve(
    model: AftModel | CoxModel,
    dataset: SurvivalDataset,
    horizon: float,
    knots: int = 5,
    penalty: float = 1e-6,
) -> CalibrationCurve:
    """Smoothed observed-vs-predicted failure probability at ``horizon``.

    Rows censored before the horizon carry no at-horizon outcome and are
    dropped (their count is reported).  The fit is ridge-penalised least
    squares on the spline coefficients (intercept unpenalised), clipped to
    [0, 1], and the result is sorted by predicted probability.
    """
    if knots < 3:
        raise ContractError("a restricted cubic spline needs at least 3 knots")
    if not horizon > 0:
        raise ContractError("horizon must be positive")
    keep = dataset.events | (dataset.times >= horizon)
    y = (dataset.events & (dataset.times <= horizon))[keep].astype(float)
    if y.size == 0:
        raise MetricError("no rows have an observable outcome at the horizon")
    pred = predicted_failure(model, dataset.design[keep], horizon)
    pred = np.broadcast_to(pred, y.shape).astype(float)
    if np.ptp(pred) <= 1e-12 * max(1.0, float(np.max(np.abs(pred)))):
        raise MetricError("all predicted probabilities are identical; the calibration curve is degenerate")
    eps = 1e-10
    lp = special.logit(np.clip(pred, eps, 1.0 - eps))
    grid = np.unique(np.quantile(lp, _knot_quantiles(knots)))
    B = rcs_basis(lp, grid) if grid.size >= 3 else np.column_stack([np.ones_like(lp), lp])
    pen = penalty * y.size * np.eye(B.shape[1])
    pen[0, 0] = 0.0
    coef = np.linalg.solve(B.T @ B + pen, B.T @ y)
    observed = np.clip(B @ coef, 0.0, 1.0)
    order = np.argsort(pred, kind="stable")
    return CalibrationCurve(pred[order], observed[order], float(horizon), int((~keep).sum()), grid)


def ici_and_e50(curve) -> tuple[float, float]:
    """(mean |predicted - observed|, |predicted - observed| at the median predicted)."""
    if isinstance(curve, CalibrationCurve):
        pred, obs = curve.predicted, curve.observed
    else:
        arr = np.asarray(list(curve), dtype=float).reshape(-1, 2)
        pred, obs = arr[:, 0], arr[:, 1]
    if pred.size == 0:
        raise ContractError("calibration curve is empty")
    order = np.argsort(pred, kind="stable")
    pred, obs = pred[order], obs[order]
    gap = np.abs(pred - obs)
    ici = float(np.mean(gap))
    n = pred.size
    if n % 2:
        e50 = float(gap[n // 2])
    else:
        e50 = float(0.5 * (gap[n // 2 - 1] + gap[n // 2]))
    return ici, e50


# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    aic: float | None
    bic: float | None
    concordance_train: float
    concordance_test: float | None
    ici_train: float
    ici_test: float | None
    e50_train: float
    e50_test: float | None
    calibration_curve: list
    horizon: float
    calibration_curve_test: list | None = None
    n_excluded_train: int = 0
    n_excluded_test: int = 0

    def to_dict(self) -> dict:
        return {
            "aic": self.aic,
            "bic": self.bic,
            "concordance_train": self.concordance_train,
            "concordance_test": self.concordance_test,
            "ici_train": self.ici_train,
            "ici_test": self.ici_test,
            "e50_train": self.e50_train,
            "e50_test": self.e50_test,
            "horizon": self.horizon,
            "calibration_curve": [list(p) for p in self.calibration_curve],
            "calibration_curve_test": None
            if self.calibration_curve_test is None
            else [list(p) for p in self.calibration_curve_test],
            "n_excluded_train": self.n_excluded_train,
            "n_excluded_test": self.n_excluded_test,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ValidationReport":
        fields_ = dict(doc)
        fields_["calibration_curve"] = [tuple(p) for p in doc.get("calibration_curve", [])]
        test_curve = doc.get("calibration_curve_test")
        fields_["calibration_curve_test"] = None if test_curve is None else [tuple(p) for p in test_curve]
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in fields_.items() if k in known})


def default_horizon(dataset: SurvivalDataset) -> float:
    """Median observed event time."""
    if dataset.n_events == 0:
        raise MetricError("no events to place a default horizon")
    return float(np.median(dataset.times[dataset.events]))


def validate(
    model: AftModel | CoxModel,
    train: SurvivalDataset,
    test: SurvivalDataset | None = None,
    horizon: float | None = None,
    knots: int = 5,
) -> ValidationReport:
    """Every metric on the train split, and all but AIC/BIC on the test split."""
    horizon = default_horizon(train) if horizon is None else float(horizon)
    is_cox = isinstance(model, CoxModel)
    c_train = concordance(risk_score(model, train.design), train.times, train.events)
    curve = calibration_curve(model, train, horizon, knots)
    ici_tr, e50_tr = ici_and_e50(curve)
    c_test = ici_te = e50_te = None
    curve_test = None
    excluded_test = 0
    if test is not None and len(test):
        c_test = concordance(risk_score(model, test.design), test.times, test.events)
        ct = calibration_curve(model, test, horizon, knots)
        ici_te, e50_te = ici_and_e50(ct)
        curve_test = ct.pairs()
        excluded_test = ct.n_excluded
    return ValidationReport(
        aic=None if is_cox else aic(model),
        bic=None if is_cox else bic(model, len(train)),
        concordance_train=c_train,
        concordance_test=c_test,
        ici_train=ici_tr,
        ici_test=ici_te,
        e50_train=e50_tr,
        e50_test=e50_te,
        calibration_curve=curve.pairs(),
        horizon=horizon,
        calibration_curve_test=curve_test,
        n_excluded_train=curve.n_excluded,
        n_excluded_test=excluded_test,
    )

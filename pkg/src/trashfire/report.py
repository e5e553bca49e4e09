"""Tables and plot-ready data: model comparison, coefficients, calibration, TRASH.

Every plot has a CSV twin; SVGs go through matplotlib's SVG backend with a
fixed hash salt and no date stamp so repeated runs write identical files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cost import TrashReport
from .ingest import SurvivalDataset
from .models import AftModel, ContractError, CoxModel, predict_survival
from .validation import ValidationReport

__all__ = [
    "TABLE_COLUMNS",
    "CoefficientRow",
    "model_comparison_table",
    "coefficient_plot_data",
    "qq_calibration_data",
    "kaplan_meier",
    "trash_table",
    "write_csv",
    "coefficient_svg",
    "qq_svg",
    "trash_svg",
]

TABLE_COLUMNS = (
    "model",
    "family",
    "AIC",
    "BIC",
    "Concordance",
    "Test Concordance",
    "ICI",
    "Test ICI",
    "E50",
    "Test E50",
)

Z_95 = 1.959963984540054


def _family(model) -> str:
    return "cox" if isinstance(model, CoxModel) else model.family.value


def model_comparison_table(models, reports) -> list[dict]:
    """One row per model with the AIC/BIC/concordance/ICI/E50 columns.

    Cox rows leave AIC and BIC empty: a partial likelihood is not comparable
    with the full likelihoods of the parametric models.
    """
    models = list(models)
    reports = list(reports)
    if not models:
        raise ContractError("no models to tabulate")
    if len(models) != len(reports):
        raise ContractError("one validation report per model is required")
    names = [name for name, _ in models]
    if len(set(names)) != len(names):
        raise ContractError("model names must be unique")
    rows = []
    for (name, model), rep in zip(models, reports):
        if isinstance(rep, dict):
            rep = ValidationReport.from_dict(rep)
        cox = isinstance(model, CoxModel)
        rows.append(
            {
                "model": name,
                "family": _family(model),
                "AIC": None if cox else rep.aic,
                "BIC": None if cox else rep.bic,
                "Concordance": rep.concordance_train,
                "Test Concordance": rep.concordance_test,
                "ICI": rep.ici_train,
                "Test ICI": rep.ici_test,
                "E50": rep.e50_train,
                "Test E50": rep.e50_test,
            }
        )
    return rows


@dataclass(frozen=True)
class CoefficientRow:
    feature: str
    coefficient: float
    lower: float | None
    upper: float | None

    @property
    def available(self) -> bool:
        return self.lower is not None


def coefficient_plot_data(model: AftModel | CoxModel) -> list[CoefficientRow]:
    """Coefficients with 95% Wald intervals, sorted by coefficient.

    AFT rows include the intercept (labelled ``"intercept"``).  A row whose
    variance is unavailable (singular information, zero-variance feature)
    has ``lower = upper = None``.
    """
    if isinstance(model, CoxModel):
        names = list(model.feature_names)
        coefs = model.theta
    else:
        names = ["intercept", *model.feature_names]
        coefs = model.theta
    if model.covariance is None:
        var = np.full(len(names), np.nan)
    else:
        var = np.diag(model.covariance)[: len(names)]
    rows = []
    for name, coef, v in zip(names, coefs, var):
        if np.isfinite(v) and v >= 0:
            se = math.sqrt(v)
            rows.append(CoefficientRow(name, float(coef), float(coef - Z_95 * se), float(coef + Z_95 * se)))
        else:
            rows.append(CoefficientRow(name, float(coef), None, None))
    rows.sort(key=lambda r: r.coefficient)
    return rows


def kaplan_meier(times, events, at) -> np.ndarray:
    """Product-limit survival estimate evaluated at the points ``at``."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    uniq, deaths = np.unique(times[events], return_counts=True)
    sorted_t = np.sort(times)
    at_risk = times.size - np.searchsorted(sorted_t, uniq, side="left")
    steps = np.cumprod(1.0 - deaths / at_risk)
    idx = np.searchsorted(uniq, np.asarray(at, dtype=float), side="right")
    return np.concatenate([[1.0], steps])[idx]


def _qq_series(model, dataset: SurvivalDataset, grid_times: np.ndarray) -> list[tuple[float, float]]:
    observed = 1.0 - kaplan_meier(dataset.times, dataset.events, grid_times)
    theoretical = np.zeros_like(grid_times)
    for k, t in enumerate(grid_times):
        if t > 0:
            theoretical[k] = 1.0 - float(np.mean(predict_survival(model, dataset.design, t)))
    return list(zip(observed.tolist(), theoretical.tolist()))


def qq_calibration_data(
    model: AftModel | CoxModel,
    train: SurvivalDataset,
    test: SurvivalDataset | None = None,
    grid: int = 50,
    window: tuple[float, float] = (0.0, 10.0),
) -> dict:
    """Observed vs model failure fractions on a time grid.

    For each grid time the observed value is the Kaplan-Meier failure
    fraction of the sample and the theoretical value the model's failure
    probability averaged over the sample's covariates.  A well specified
    model puts every point on the diagonal.  Returns ``{"train": [...]}``
    plus ``"test"`` when a test split is given.
    """
    if grid < 2:
        raise ContractError("grid needs at least two points")
    lo, hi = window
    if not (0 <= lo < hi):
        raise ContractError("window must satisfy 0 <= start < end")
    grid_times = np.linspace(lo, hi, grid)
    out = {"window": [float(lo), float(hi)], "train": _qq_series(model, train, grid_times)}
    if test is not None and len(test):
        out["test"] = _qq_series(model, test, grid_times)
    return out


def trash_table(entries) -> list[dict]:
    rows = []
    for name, rep in entries:
        if isinstance(rep, dict):
            rep = TrashReport(**rep)
        rows.append({"model": name, **rep.to_dict()})
    return rows


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else format(value, ".17g")
    return str(value)


def write_csv(rows: list[dict], path, columns=None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])


# ---------------------------------------------------------------------------
# SVG


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "trashfire"
    return plt


def _save(plt, fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def coefficient_svg(rows_by_model: dict, path) -> None:
    """Forest plot of coefficients, one panel per model."""
    plt = _figure()
    n = max(1, len(rows_by_model))
    fig, axes = plt.subplots(1, n, figsize=(4.5 * n, 4), squeeze=False)
    for ax, (name, rows) in zip(axes[0], rows_by_model.items()):
        ys = np.arange(len(rows))
        for y, row in zip(ys, rows):
            if row.available:
                ax.plot([row.lower, row.upper], [y, y], color="0.4")
            ax.plot(row.coefficient, y, "o", color="C0" if row.available else "C3")
        ax.axvline(0.0, color="k", lw=0.8, ls="--")
        ax.set_yticks(ys, [r.feature for r in rows])
        ax.set_xlabel("coefficient (log scale)")
        ax.set_title(name)
    _save(plt, fig, path)


def qq_svg(series_by_model: dict, path) -> None:
    plt = _figure()
    n = max(1, len(series_by_model))
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 4), squeeze=False)
    for ax, (name, data) in zip(axes[0], series_by_model.items()):
        for key, colour in (("train", "C0"), ("test", "C3")):
            if key in data and data[key]:
                pts = np.asarray(data[key], dtype=float)
                ax.plot(pts[:, 0], pts[:, 1], ".", color=colour, label=key)
        ax.plot([0, 1], [0, 1], "k--", lw=0.8)
        ax.set_xlabel("observed")
        ax.set_ylabel("model")
        ax.set_title(name)
        ax.legend(loc="lower right")
    _save(plt, fig, path)


def trash_svg(rows: list[dict], path) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(rows)), 4))
    names = [r["model"] for r in rows]
    scores = [r["trash_score"] for r in rows]
    colours = ["C3" if r["verdict"] == "broken" else "C0" for r in rows]
    ax.bar(np.arange(len(rows)), scores, color=colours)
    ax.axhline(1.0, color="k", ls="--", lw=0.8)
    ax.set_xticks(np.arange(len(rows)), names)
    if scores and min(scores) > 0:
        ax.set_yscale("log")
    ax.set_ylabel("TRASH score")
    _save(plt, fig, path)

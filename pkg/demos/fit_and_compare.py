"""
Fitting survival families to an attack log
==========================================

Simulate a log of attack trials, fit every family and put the validation
metrics side by side, the way a results table would.
"""

import json
import warnings
from pathlib import Path

import numpy as np

from trashfire.fitting import fit_families
from trashfire.ingest import encode
from trashfire.report import TABLE_COLUMNS, coefficient_plot_data, model_comparison_table
from trashfire.synthetic import GeneratorSpec, generate
from trashfire.validation import validate

# the bundled generator spec: Weibull attack times, stronger attacks take longer,
# PGD is faster than FGM, about 1% of trials hit the budget
spec = GeneratorSpec.from_dict(json.loads((Path(__file__).parent / "demo_spec.json").read_text()))
records = generate(spec)
print(f"{len(records)} trials, {sum(r.event for r in records)} successful attacks")

# constant log columns (layers, epochs, ...) get a warning and a zero column
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    train, test = encode(records, seed=0, test_fraction=0.2)
print("features:", ", ".join(train.feature_names))

families = ["exponential", "weibull", "log_normal", "log_logistic", "generalized_gamma", "cox"]
models = fit_families(families, train)
reports = [validate(models[f], train, test) for f in families]

###############################################################################
# The generating family should have the lowest AIC and a small ICI.



def cell(value):
    # Cox rows have no AIC/BIC: a partial likelihood is not comparable
    return f"{'--':>10}" if value is None else f"{value:10.4f}"


rows = model_comparison_table([(f, models[f]) for f in families], reports)
print()
labels = ["AIC", "BIC", "C", "test C", "ICI", "test ICI", "E50", "test E50"]
print(f"{'family':>18}" + "".join(f"{c:>10}" for c in labels))
for row in rows:
    print(f"{row['family']:>18}" + "".join(cell(row[c]) for c in TABLE_COLUMNS[2:]))

###############################################################################
# Coefficients live on the log-time scale: positive means slower failure.

print()
for row in coefficient_plot_data(models["weibull"]):
    if row.available and row.coefficient != 0.0:
        print(f"{row.feature:>16}  {row.coefficient:+.3f}  [{row.lower:+.3f}, {row.upper:+.3f}]")

best = min((r.aic, f) for f, r in zip(families, reports) if r.aic is not None)[1]
print("\nlowest AIC:", best)
assert np.isfinite(reports[1].aic)

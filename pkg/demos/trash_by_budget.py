"""
TRASH score across perturbation budgets
=======================================

The score divides training time per sample by the expected time to a
successful attack.  Restricting the log to weak attacks (a small budget)
leaves slower attacks, so the score falls as the budget tightens.
"""

import math
import warnings

import numpy as np

from trashfire.cost import conditional_subset, trash_analysis
from trashfire.fitting import fit_aft
from trashfire.ingest import encode
from trashfire.synthetic import GeneratorSpec, generate

# weaker perturbations (small strength) take longer to find a misclassification
spec = GeneratorSpec(
    family="log_logistic",
    intercept=math.log(0.3),
    true_theta={"attack_strength": -1.5},
    true_shape={"sigma": 0.4},
    covariate_distributions={"attack_strength": {"uniform": [0.05, 1.0]}, "t_train": {"constant": 0.5}},
    censoring_rule={"budget": 20.0},
    n=4000,
    seed=3,
)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    train, _ = encode(generate(spec), seed=0)

print(f"{'eps*':>6} {'rows':>6} {'E[T] (s)':>10} {'score':>8}  verdict")
for eps in (0.1, 0.25, 0.5, 0.75, 1.0):
    subset = conditional_subset(train, eps)
    # refit on the rows inside the budget, then integrate at their mean profile
    model = fit_aft("log_logistic", subset)
    rep = trash_analysis(model, subset, epsilon_max=eps)
    print(f"{eps:6.2f} {len(subset):6d} {rep.expected_survival:10.4f} {rep.trash_score:8.3f}  {rep.verdict}")

###############################################################################
# The same analysis from the command line:
#
#     trashfire fit --input log.csv --family log_logistic --out model.json
#     trashfire trash --model model.json --input log.csv --epsilon-max 0.5 --out trash.json

"""
Concordance and calibration on a toy problem
============================================

A small worked example of the two validation metrics, checked against
quantities that can be computed by hand.
"""

import numpy as np

from trashfire.models import AftModel
from trashfire.ingest import from_arrays
from trashfire.synthetic import generate_arrays
from trashfire.validation import calibration_curve, concordance, concordance_bruteforce, ici_and_e50

# three subjects, the middle one censored: pairs (1,2), (1,3), (3,2) are comparable
times = np.array([1.0, 2.0, 3.0])
events = np.array([True, False, True])
scores = np.array([1.0, 5.0, 2.0])
print("pair counts (concordant, tied, comparable):", concordance_bruteforce(scores, times, events))
print("C =", concordance(scores, times, events))

###############################################################################
# Calibration: draw data from a known model, then score that model.  The
# smoothed observed failure fraction should track the prediction.

rng = np.random.default_rng(0)
X = rng.uniform(-1, 1, (5000, 2))
t, e = generate_arrays("weibull", 0.2, [0.8, -0.4], {"sigma": 0.6}, X, seed=1)
truth = AftModel("weibull", [0.2, 0.8, -0.4], shape={"sigma": 0.6})
wrong = AftModel("weibull", [0.2, 0.8, -0.4], shape={"sigma": 1.2})

data = from_arrays(X, t, e)
horizon = float(np.median(t))
for name, model in (("true", truth), ("too dispersed", wrong)):
    curve = calibration_curve(model, data, horizon)
    ici, e50 = ici_and_e50(curve)
    print(f"{name:>14}: ICI {ici:.4f}  E50 {e50:.4f}")

"""Survival analysis of adversarial failure times and the TRASH score."""

from .cost import (
    CostModel,
    TrashReport,
    accuracy,
    attack_cost,
    conditional_subset,
    expected_survival,
    failure_rate,
    trash_analysis,
    trash_score,
    training_cost,
)
from .fitting import FitConfig, censored_log_likelihood, fit_aft, fit_cox, numerical_gradient_check
from .ingest import ExperimentRecord, SurvivalDataset, encode, from_arrays, parse_log
from .models import (
    AftFamily,
    AftModel,
    CoxModel,
    acceleration,
    cox_hazard_ratio,
    cox_survival,
    cumulative_hazard,
    density,
    hazard,
    survival,
)
from .synthetic import GeneratorSpec, generate, inverse_transform
from .validation import ValidationReport, aic, bic, calibration_curve, concordance, ici_and_e50, validate

__version__ = "0.1.0"

"""Functional mediation analysis for intensive longitudinal data.

Two-stage estimator: a time-varying effect model for the mediator process
and a scalar-on-function regression for the outcome, combined into an
integrated indirect effect with subject-level bootstrap inference.
"""
__version__ = "0.1.0"

from .data import LongDataset
from .errors import ConvergenceError, ConvergenceWarning, DomainError, FunmedError, InputError
from .funreg import fit_scalar_on_function, presmooth_subjects
from .glm import LinkFunction, fit_penalized_glm, sandwich_covariance, select_lambda
from .mediation import (MediationConfig, bootstrap_mediation, fit_funmediation,
                        indirect_effect, log_link_decomposition)
from .simulate import Scenario, generate_dataset, run_simulation_study, true_indirect_effect
from .splines import BasisSpec, bspline_basis, difference_penalty
from .tvem import fit_tvem

__all__ = [
    "BasisSpec", "ConvergenceError", "ConvergenceWarning", "DomainError", "FunmedError",
    "InputError", "LinkFunction", "LongDataset", "MediationConfig", "Scenario",
    "bootstrap_mediation", "bspline_basis", "difference_penalty", "fit_funmediation",
    "fit_penalized_glm", "fit_scalar_on_function", "fit_tvem", "generate_dataset",
    "indirect_effect", "log_link_decomposition", "presmooth_subjects", "run_simulation_study",
    "sandwich_covariance", "select_lambda", "true_indirect_effect",
]

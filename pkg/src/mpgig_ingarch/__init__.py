"""
Multivariate count time series with a shared generalized inverse-Gaussian
mixing variable and log-linear INGARCH dynamics.
"""

from mpgig_ingarch.bootstrap import BootstrapResult, parametric_bootstrap
from mpgig_ingarch.em import EmConfig, FitResult, fit
from mpgig_ingarch.exceptions import DomainError, EstimationError, SimulationError
from mpgig_ingarch.hybrid import fit_h_gmcem
from mpgig_ingarch.methods import fit_series
from mpgig_ingarch.model import (
    CountSeries,
    ModelShape,
    ModelSpec,
    cond_log_lik,
    filter_means,
    simulate,
)
from mpgig_ingarch.qmle import d_from_dstar, fit_qmle

__all__ = [
    "BootstrapResult",
    "CountSeries",
    "DomainError",
    "EmConfig",
    "EstimationError",
    "FitResult",
    "ModelShape",
    "ModelSpec",
    "SimulationError",
    "cond_log_lik",
    "d_from_dstar",
    "filter_means",
    "fit",
    "fit_h_gmcem",
    "fit_qmle",
    "fit_series",
    "parametric_bootstrap",
    "simulate",
]

__version__ = "0.1.0"

"""Importance-weighted and truncated spectral algorithms for kernel regression
under covariate shift, on synthetic Mercer kernels with known spectra."""

from .estimator import Dataset, SpectralEstimate, fit, fit_truncated, predict, error_norm
from .filters import FilterSpec, filter_value, residual_value
from .mercer import KernelSpec, MercerFunction, SourceCondition, make_source_function
from .shift import ShiftScenario, TruncationRule

__version__ = "0.1.0"

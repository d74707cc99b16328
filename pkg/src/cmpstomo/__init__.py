"""Tomography of continuous matrix product states from phase correlators.

Pipeline: interference shots -> even-order phase correlators -> transfer
spectrum from the two-point function -> ``M`` matrix from the four-point
function -> predicted higher-order correlators scored against held-out data.
"""

from .cmps import (
    CmpsState,
    ExactModel,
    build_transfer_matrix,
    eval_correlator_diagonal,
    eval_correlator_direct,
    generate_state,
    is_normalized,
    m_in_diagonal_basis,
    normalize,
    spectral_decompose,
)
from .correlations import (
    CorrTensor,
    Deviation,
    Grid1D,
    ShotEnsemble,
    epsilon_metric,
    estimate_correlator,
    raw_phase_average,
    read_corr,
    read_shots,
    write_corr,
    write_shots,
)
from .errors import CmpsTomoError, FitError, ValidationError
from .expfit import ExpSumModel, fit_spectrum, prony_initialize, refine_least_squares
from .mfit import MFitProblem, MFitResult, fit_m, objective
from .predict import ReconstructedModel, Report, predict, render_error_table, validation_report
from .shots import PhaseFieldModel, sample_shots

__version__ = "0.1.0"

__all__ = [
    "CmpsState",
    "CmpsTomoError",
    "CorrTensor",
    "Deviation",
    "ExactModel",
    "ExpSumModel",
    "FitError",
    "Grid1D",
    "MFitProblem",
    "MFitResult",
    "PhaseFieldModel",
    "ReconstructedModel",
    "Report",
    "ShotEnsemble",
    "ValidationError",
    "build_transfer_matrix",
    "epsilon_metric",
    "estimate_correlator",
    "eval_correlator_diagonal",
    "eval_correlator_direct",
    "fit_m",
    "fit_spectrum",
    "generate_state",
    "is_normalized",
    "m_in_diagonal_basis",
    "normalize",
    "objective",
    "predict",
    "prony_initialize",
    "raw_phase_average",
    "read_corr",
    "read_shots",
    "refine_least_squares",
    "render_error_table",
    "sample_shots",
    "spectral_decompose",
    "validation_report",
    "write_corr",
    "write_shots",
]

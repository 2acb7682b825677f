"""Joint demixing and sparse MVAR connectivity estimation."""

__version__ = "0.1.0"

from .model import (
    FilterBank,
    MixingMatrix,
    MvarCoefficients,
    SourceModel,
    TimeSeriesMatrix,
    filter_bank_to_source_model,
    innovations,
    simulate_sources,
    source_model_to_filter_bank,
)
from .cost import GroupPenaltySpec, cost_scsa, grad_csa, grad_scsa, nll_csa
from .estimators import (
    FitRequest,
    FitResult,
    fit,
    fit_csa,
    fit_ica,
    fit_mvarica,
    fit_scsa,
    fit_scsa_em,
    select_lambda_cv,
    select_order_bic,
)
from .simulator import Dataset, SimulationSpec, generate, load_dataset, save_dataset
from .evaluation import (
    EvalReport,
    PairingResult,
    connectivity_auc,
    evaluate,
    matrix_gof,
    optimal_pairing,
    pattern_gof,
    regression_coefficient,
)

__all__ = [
    "FilterBank",
    "MixingMatrix",
    "MvarCoefficients",
    "SourceModel",
    "TimeSeriesMatrix",
    "filter_bank_to_source_model",
    "innovations",
    "simulate_sources",
    "source_model_to_filter_bank",
    "GroupPenaltySpec",
    "cost_scsa",
    "grad_csa",
    "grad_scsa",
    "nll_csa",
    "FitRequest",
    "FitResult",
    "fit",
    "fit_csa",
    "fit_ica",
    "fit_mvarica",
    "fit_scsa",
    "fit_scsa_em",
    "select_lambda_cv",
    "select_order_bic",
    "Dataset",
    "SimulationSpec",
    "generate",
    "load_dataset",
    "save_dataset",
    "EvalReport",
    "PairingResult",
    "connectivity_auc",
    "evaluate",
    "matrix_gof",
    "optimal_pairing",
    "pattern_gof",
    "regression_coefficient",
    "__version__",
]

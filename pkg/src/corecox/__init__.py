"""CORE-Cox: two-stage transfer learning for multi-outcome Cox models."""

from .survival import (
    OutcomeColumn,
    SurvivalDataset,
    CoefficientMatrix,
    LowRankFactors,
    neg_log_partial_likelihood,
    plik_gradient,
    log_risk_scores,
    materialize,
)
from .estimators import (
    PenaltySpec,
    FitReport,
    fit_cox,
    fit_cox_penalized,
    fit_lowrank_mtl,
    pool_datasets,
)
from .transfer import TransferFit, fit_core_cox, fit_cox_transfer, direct_transfer
from .evaluation import (
    CVPlan,
    MethodResult,
    HazardRatioRow,
    METHOD_NAMES,
    harrell_c_index,
    top_k_lift,
    run_nested_cv,
    bootstrap_hazard_ratios,
    default_grids,
)
from .simulation import SimConfig, SimTruth, generate, rrmse, run_recovery_study, run_coverage_study

__version__ = "0.1.0"

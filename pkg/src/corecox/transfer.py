"""Two-stage transfer estimators.

Stage 1 learns a low-rank coefficient matrix on the source cohort; stage 2
adapts it to the target cohort through a penalized residual correction
estimated column by column (the columns decouple under element-wise
penalties).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import (
    FitReport,
    PenaltySpec,
    _newton,
    _prox_gradient,
    _soft_threshold,
    fit_cox_penalized,
    fit_lowrank_mtl,
)
from .survival import (
    CoefficientMatrix,
    LowRankFactors,
    SurvivalDataset,
    _workspace,
    materialize,
)

__all__ = ["TransferFit", "fit_core_cox", "fit_cox_transfer", "direct_transfer"]


@dataclass(frozen=True)
class TransferFit:
    """Frozen source matrix, residual correction, and the resulting target model."""

    source_matrix: CoefficientMatrix
    residual: np.ndarray
    target_matrix: CoefficientMatrix
    rank_used: int
    residual_penalty: PenaltySpec
    reports: dict

    def __post_init__(self):
        res = np.asarray(self.residual, dtype=float)
        if not np.all(np.isfinite(res)):
            raise ValueError("residual must be finite")
        if not np.array_equal(
            self.target_matrix.values, self.source_matrix.values + res
        ):
            raise ValueError("target matrix must equal source + residual exactly")
        res.setflags(write=False)
        object.__setattr__(self, "residual", res)


def solve_residual_column(data: SurvivalDataset, outcome_index: int,
                          offset: np.ndarray, penalty: PenaltySpec,
                          tol=1e-7, max_iter=5000):
    """Minimize nll(offset + theta) + penalty(theta) over theta for one outcome."""
    ws = _workspace(data, outcome_index)
    offset = np.asarray(offset, dtype=float)
    p = data.n_predictors
    theta0 = np.zeros(p)
    lam = penalty.lam
    if penalty.kind == "l1" and lam > 0:

        def value_grad(theta):
            return ws.value_grad(offset + theta)

        def prox(z, step):
            return _soft_threshold(z, step * lam)

        return _prox_gradient(value_grad, prox,
                              lambda t: lam * np.abs(t).sum(), theta0,
                              tol=tol, max_iter=max_iter)
    if penalty.kind == "l2" and lam > 0:
        eye = np.eye(p)

        def vgh(theta):
            f, g, h = ws.value_grad_hess(offset + theta)
            return (f + 0.5 * lam * float(theta @ theta),
                    g + lam * theta, h + lam * eye)

        return _newton(vgh, theta0, tol=tol, max_iter=max(max_iter, 200))

    def vgh0(theta):
        return ws.value_grad_hess(offset + theta)

    return _newton(vgh0, theta0, tol=tol, max_iter=max(max_iter, 200))


def fit_core_cox(source: SurvivalDataset, target: SurvivalDataset, rank: int,
                 factor_penalty: PenaltySpec, residual_penalty: PenaltySpec,
                 stage1_factors: LowRankFactors | None = None,
                 residual_tol=1e-7) -> TransferFit:
    """Two-stage fit: low-rank source model plus penalized target residual.

    `stage1_factors` lets callers reuse a cached stage-1 fit; stage 1 never
    sees target data either way.
    """
    if not source.same_schema(target):
        raise ValueError("source and target must share predictor and outcome names")
    reports = {}
    if stage1_factors is None:
        stage1_factors, stage1_report = fit_lowrank_mtl(source, rank, factor_penalty)
        reports["stage1"] = stage1_report
    b_source = materialize(stage1_factors, source.predictor_names,
                           source.outcome_names)
    kk = target.n_outcomes
    residual = np.zeros_like(b_source.values)
    stage2_reports = []
    for k in range(kk):
        theta, rep = solve_residual_column(
            target, k, b_source.values[:, k], residual_penalty, tol=residual_tol
        )
        residual[:, k] = theta
        stage2_reports.append(rep)
    reports["stage2"] = stage2_reports
    target_matrix = CoefficientMatrix(
        b_source.values + residual, target.predictor_names, target.outcome_names
    )
    return TransferFit(
        source_matrix=b_source,
        residual=residual,
        target_matrix=target_matrix,
        rank_used=stage1_factors.rank,
        residual_penalty=residual_penalty,
        reports=reports,
    )


def fit_cox_transfer(source: SurvivalDataset, target: SurvivalDataset,
                     outcome_index: int, residual_penalty: PenaltySpec,
                     source_beta: np.ndarray | None = None):
    """Single-outcome residual transfer: source Cox fit plus target residual.

    The source fit is lightly l2-regularized (lam = 1e-4) so it exists even
    under separation; `source_beta` lets callers reuse a cached source fit.
    """
    if not source.same_schema(target):
        raise ValueError("source and target must share predictor and outcome names")
    if source_beta is None:
        source_beta, _ = fit_cox_penalized(
            source, outcome_index, PenaltySpec("l2", 1e-4)
        )
    theta, report = solve_residual_column(
        target, outcome_index, source_beta, residual_penalty
    )
    return source_beta + theta, report


def direct_transfer(source_fit: LowRankFactors, predictor_names=None,
                    outcome_names=None) -> CoefficientMatrix:
    """Apply the source low-rank model to the target without adaptation."""
    return materialize(source_fit, predictor_names, outcome_names)

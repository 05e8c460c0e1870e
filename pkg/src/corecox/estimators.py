"""Single-cohort estimators: Cox, penalized Cox, and low-rank multi-task Cox.

All solvers are deterministic given data and configuration; seed-to-seed
variation in experiments comes only from CV splits and bootstrap resampling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .survival import (
    CoefficientMatrix,
    LowRankFactors,
    OutcomeColumn,
    SurvivalDataset,
    _workspace,
)

__all__ = [
    "PenaltySpec",
    "FitReport",
    "fit_cox",
    "fit_cox_penalized",
    "fit_lowrank_mtl",
    "pool_datasets",
]

DIVERGENCE_BOUND = 50.0
GRAD_TOL = 1e-7


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty choice for a Cox fit: none, l1 (lasso), or l2 (ridge)."""

    kind: str = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "l1", "l2"):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.kind == "none" and self.lam != 0:
            raise ValueError("kind 'none' requires lambda = 0")

    def value(self, beta: np.ndarray) -> float:
        if self.kind == "l1":
            return self.lam * np.abs(beta).sum()
        if self.kind == "l2":
            return 0.5 * self.lam * float(beta @ beta)
        return 0.0


@dataclass
class FitReport:
    """Convergence diagnostics for one optimizer run."""

    converged: bool
    iterations: int
    final_objective: float
    grad_norm_at_exit: float
    message: str = ""
    objective_history: list = field(default_factory=list, repr=False)


def _soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _newton(value_grad_hess, beta0, tol=GRAD_TOL, max_iter=200,
            bound=DIVERGENCE_BOUND):
    """Damped Newton with backtracking; monotone in the objective."""
    beta = np.array(beta0, dtype=float)
    f, g, h = value_grad_hess(beta)
    history = [f]
    for it in range(1, max_iter + 1):
        gnorm = np.abs(g).max()
        if gnorm <= tol:
            return beta, FitReport(True, it - 1, f, gnorm,
                                   objective_history=history)
        if np.abs(beta).max() > bound:
            return beta, FitReport(False, it - 1, f, gnorm,
                                   message="divergence guard: |beta| > bound",
                                   objective_history=history)
        try:
            direction = np.linalg.solve(
                h + 1e-10 * np.eye(h.shape[0]), -g
            )
        except np.linalg.LinAlgError:
            direction = -g
        if g @ direction >= 0:  # not a descent direction; fall back
            direction = -g
        step = 1.0
        accepted = False
        for _ in range(60):
            cand = beta + step * direction
            try:
                f_new, g_new, h_new = value_grad_hess(cand)
            except FloatingPointError:
                f_new = np.inf
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * (g @ direction):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return beta, FitReport(False, it, f, np.abs(g).max(),
                                   message="line search failed",
                                   objective_history=history)
        beta, f, g, h = cand, f_new, g_new, h_new
        history.append(f)
    gnorm = np.abs(g).max()
    return beta, FitReport(gnorm <= tol, max_iter, f, gnorm,
                           message="max iterations reached" if gnorm > tol else "",
                           objective_history=history)


def _prox_gradient(value_grad, prox, penalty_value, beta0, tol=GRAD_TOL,
                   max_iter=5000, bound=DIVERGENCE_BOUND):
    """ISTA with backtracking on the local quadratic model (monotone)."""
    beta = np.array(beta0, dtype=float)
    f, g = value_grad(beta)
    lip = 1.0
    history = [f + penalty_value(beta)]
    for it in range(1, max_iter + 1):
        if np.abs(beta).max() > bound:
            return beta, FitReport(False, it - 1, history[-1], np.inf,
                                   message="divergence guard: |beta| > bound",
                                   objective_history=history)
        while True:
            cand = prox(beta - g / lip, 1.0 / lip)
            diff = cand - beta
            f_cand, g_cand = value_grad(cand)
            if np.isfinite(f_cand) and f_cand <= (
                f + g @ diff + 0.5 * lip * float(diff @ diff) + 1e-12
            ):
                break
            lip *= 2.0
            if lip > 1e18:
                return beta, FitReport(False, it, history[-1], np.inf,
                                       message="step size underflow",
                                       objective_history=history)
        residual = lip * np.abs(diff).max()
        beta, f, g = cand, f_cand, g_cand
        history.append(f + penalty_value(beta))
        if residual <= tol:
            return beta, FitReport(True, it, history[-1], residual,
                                   objective_history=history)
        lip = max(lip * 0.9, 1e-10)
    return beta, FitReport(False, max_iter, history[-1], residual,
                           message="max iterations reached",
                           objective_history=history)


def fit_cox(data: SurvivalDataset, outcome_index: int, tol=GRAD_TOL,
            max_iter=200):
    """Unpenalized Cox fit for one outcome (Newton for p <= 50)."""
    ws = _workspace(data, outcome_index)
    p = data.n_predictors
    if p >= data.event_count(outcome_index):
        warnings.warn(
            f"p = {p} >= event count {data.event_count(outcome_index)}; "
            "unpenalized Cox fit may be unstable",
            stacklevel=2,
        )
    beta0 = np.zeros(p)
    if p <= 50:
        beta, report = _newton(ws.value_grad_hess, beta0, tol=tol,
                               max_iter=max_iter)
        # monotone-likelihood probe: at a true optimum the objective rises
        # along the ray 2*beta; under separation it keeps decreasing
        if report.converged and np.abs(beta).max() > 1.0:
            if ws.value(2.0 * beta) <= report.final_objective + 1e-12:
                report.converged = False
                report.message = ("divergence: likelihood is monotone along "
                                  "the fitted direction (separation)")
        return beta, report
    res = scipy.optimize.minimize(
        ws.value_grad, beta0, jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0},
    )
    gnorm = float(np.abs(res.jac).max())
    diverged = np.abs(res.x).max() > DIVERGENCE_BOUND
    return res.x, FitReport(gnorm <= tol and not diverged, int(res.nit),
                            float(res.fun), gnorm,
                            message="" if res.success else str(res.message))


def fit_cox_penalized(data: SurvivalDataset, outcome_index: int,
                      penalty: PenaltySpec, tol=GRAD_TOL, max_iter=5000):
    """Penalized Cox fit: event-averaged partial likelihood + l1 or l2 penalty.

    Smooth cases (no penalty, or l2) use damped Newton; l1 uses proximal
    gradient with backtracking, so zero coefficients are exactly zero.
    """
    ws = _workspace(data, outcome_index)
    p = data.n_predictors
    beta0 = np.zeros(p)
    lam = penalty.lam
    if penalty.kind == "none" or lam == 0.0:
        return _newton(ws.value_grad_hess, beta0, tol=tol, max_iter=max(max_iter, 200))
    if penalty.kind == "l2":
        eye = np.eye(p)

        def vgh(beta):
            f, g, h = ws.value_grad_hess(beta)
            return (f + 0.5 * lam * float(beta @ beta),
                    g + lam * beta, h + lam * eye)

        return _newton(vgh, beta0, tol=tol, max_iter=max(max_iter, 200))

    def prox(z, step):
        return _soft_threshold(z, step * lam)

    return _prox_gradient(
        ws.value_grad, prox, lambda b: lam * np.abs(b).sum(), beta0,
        tol=tol, max_iter=max_iter,
    )


def _mtl_objective_parts(workspaces, u, v, lam):
    b = u @ v.T
    total = 0.0
    grad_b = np.empty_like(b)
    for k, ws in enumerate(workspaces):
        f, g = ws.value_grad(b[:, k])
        total += f
        grad_b[:, k] = g
    total += 0.5 * lam * (float((u * u).sum()) + float((v * v).sum()))
    return total, grad_b


def _ridge_warm_start(data: SurvivalDataset, rank: int):
    """Warm start: SVD of the matrix of per-outcome ridge solutions (lam=1)."""
    p, kk = data.n_predictors, data.n_outcomes
    w = np.zeros((p, kk))
    ridge = PenaltySpec("l2", 1.0)
    for k in range(kk):
        beta, _ = fit_cox_penalized(data, k, ridge, tol=1e-6, max_iter=200)
        w[:, k] = beta
    uu, s, vt = np.linalg.svd(w, full_matrices=False)
    s_r = np.sqrt(np.maximum(s[:rank], 1e-6))
    return uu[:, :rank] * s_r, vt[:rank].T * s_r


def fit_lowrank_mtl(data: SurvivalDataset, rank: int, penalty: PenaltySpec,
                    max_alternations=100, rel_tol=1e-6):
    """Joint low-rank multi-task Cox fit B = U V' over all outcomes.

    Alternating block minimization over U then V with Frobenius penalties;
    each smooth block is solved by L-BFGS. Tasks enter with equal weight
    after event-averaging.
    """
    p, kk = data.n_predictors, data.n_outcomes
    rank = int(rank)
    if not 1 <= rank <= min(p, kk):
        raise ValueError(f"rank {rank} out of range [1, {min(p, kk)}]")
    if penalty.kind == "l1":
        raise ValueError("low-rank MTL uses Frobenius (l2) factor penalties")
    lam = penalty.lam
    for k in range(kk):
        if data.event_count(k) < 1:
            raise ValueError(f"outcome {k} has zero events")
    workspaces = [_workspace(data, k) for k in range(kk)]
    u, v = _ridge_warm_start(data, rank)

    def u_obj(u_flat, v_fixed):
        u_mat = u_flat.reshape(p, rank)
        f, grad_b = _mtl_objective_parts(workspaces, u_mat, v_fixed, lam)
        # drop the constant ||v||^2 term from the block objective
        grad_u = grad_b @ v_fixed + lam * u_mat
        return f - 0.5 * lam * float((v_fixed * v_fixed).sum()), grad_u.ravel()

    def v_obj(v_flat, u_fixed):
        v_mat = v_flat.reshape(kk, rank)
        f, grad_b = _mtl_objective_parts(workspaces, u_fixed, v_mat, lam)
        grad_v = grad_b.T @ u_fixed + lam * v_mat
        return f - 0.5 * lam * float((u_fixed * u_fixed).sum()), grad_v.ravel()

    f_prev, _ = _mtl_objective_parts(workspaces, u, v, lam)
    history = [f_prev]
    converged = False
    n_alt = 0
    for n_alt in range(1, max_alternations + 1):
        res_u = scipy.optimize.minimize(
            u_obj, u.ravel(), args=(v,), jac=True, method="L-BFGS-B",
            options={"maxiter": 500, "gtol": 1e-9, "ftol": 1e-14},
        )
        u = res_u.x.reshape(p, rank)
        res_v = scipy.optimize.minimize(
            v_obj, v.ravel(), args=(u,), jac=True, method="L-BFGS-B",
            options={"maxiter": 500, "gtol": 1e-9, "ftol": 1e-14},
        )
        v = res_v.x.reshape(kk, rank)
        f_now, _ = _mtl_objective_parts(workspaces, u, v, lam)
        history.append(min(f_now, history[-1]))
        if f_prev - f_now <= rel_tol * max(abs(f_prev), 1.0):
            converged = True
            f_prev = f_now
            break
        f_prev = f_now

    f_final, grad_b = _mtl_objective_parts(workspaces, u, v, lam)
    grad_norm = max(
        np.abs(grad_b @ v + lam * u).max(),
        np.abs(grad_b.T @ u + lam * v).max(),
    )
    if np.abs(u @ v.T).max() > DIVERGENCE_BOUND:
        converged = False
        message = "divergence guard: |B| > bound"
    else:
        message = "" if converged else "max alternations reached"
    report = FitReport(converged, n_alt, f_final, grad_norm,
                       message=message, objective_history=history)
    return LowRankFactors(u, v, rank), report


def pool_datasets(a: SurvivalDataset, b: SurvivalDataset) -> SurvivalDataset:
    """Row-concatenate two schema-compatible datasets (naive pooling)."""
    if not a.same_schema(b):
        raise ValueError("datasets must share predictor and outcome names")
    return SurvivalDataset(
        covariates=np.vstack([a.covariates, b.covariates]),
        outcomes=tuple(
            OutcomeColumn(
                np.concatenate([ca.time, cb.time]),
                np.concatenate([ca.event, cb.event]),
            )
            for ca, cb in zip(a.outcomes, b.outcomes)
        ),
        predictor_names=a.predictor_names,
        outcome_names=a.outcome_names,
    )


def coefficients_from_columns(columns, predictor_names, outcome_names):
    """Assemble per-outcome coefficient vectors into a CoefficientMatrix."""
    values = np.column_stack(columns)
    return CoefficientMatrix(values, predictor_names, outcome_names)

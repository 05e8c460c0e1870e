"""Metrics, the method registry, nested cross-validation, and bootstrap CIs.

The harness guarantees that all methods see identical outer splits for a
given seed, that held-out folds are never touched by tuning, and that the
source cohort participates in fitting only.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import PenaltySpec, fit_cox, fit_cox_penalized, fit_lowrank_mtl, pool_datasets
from .survival import CoefficientMatrix, SurvivalDataset, materialize, neg_log_partial_likelihood
from .transfer import fit_core_cox, fit_cox_transfer

logger = logging.getLogger(__name__)

__all__ = [
    "CVPlan",
    "MethodResult",
    "HazardRatioRow",
    "METHOD_NAMES",
    "harrell_c_index",
    "top_k_lift",
    "assign_folds",
    "fold_hash",
    "fit_method",
    "default_grids",
    "tune_on_folds",
    "run_nested_cv",
    "bootstrap_hazard_ratios",
]

METHOD_NAMES = (
    "cox",
    "cox-lasso",
    "cox-ridge",
    "lr-mtl-target",
    "lr-mtl-source",
    "lr-mtl-both",
    "cox-transfer",
    "core-cox",
)


@dataclass(frozen=True)
class CVPlan:
    """Nested cross-validation plan; folds partition the target subjects."""

    outer_folds: int = 5
    inner_folds: int = 4
    seed: int = 0
    stratify_by_event: bool = True

    def __post_init__(self):
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise ValueError("outer_folds and inner_folds must both be >= 2")


@dataclass
class MethodResult:
    """Held-out metrics for one (method, outer fold, seed) unit."""

    method_name: str
    seed: int
    fold_index: int
    per_outcome_cindex: list
    per_outcome_lift: list
    chosen_hyperparameters: dict
    fold_hash: str = ""


@dataclass(frozen=True)
class HazardRatioRow:
    """One predictor's hazard ratio with a bootstrap confidence interval."""

    predictor: str
    hr: float
    ci_low: float
    ci_high: float
    method: str

    def __post_init__(self):
        if not (self.ci_low <= self.hr <= self.ci_high):
            raise ValueError("interval must satisfy ci_low <= hr <= ci_high")
        if self.ci_low <= 0:
            raise ValueError("hazard ratios must be positive")


def harrell_c_index(time, event, score) -> float:
    """Harrell's concordance index over comparable pairs, no IPCW.

    A pair (i, j) is comparable when subject i has an observed event and
    either t_i < t_j, or t_i == t_j with j censored. Tied event times with
    both events observed are not comparable. Tied scores earn 0.5 credit.
    """
    t = np.asarray(time, dtype=float)
    e = np.asarray(event, dtype=bool)
    s = np.asarray(score, dtype=float)
    if not (t.shape == e.shape == s.shape) or t.ndim != 1:
        raise ValueError("time, event, and score must be equal-length vectors")
    ti, tj = t[:, None], t[None, :]
    comparable = e[:, None] & ((ti < tj) | ((ti == tj) & ~e[None, :]))
    np.fill_diagonal(comparable, False)
    n_pairs = comparable.sum()
    if n_pairs == 0:
        raise ValueError("no comparable pairs; concordance is undefined")
    si, sj = s[:, None], s[None, :]
    credit = np.where(si > sj, 1.0, np.where(si == sj, 0.5, 0.0))
    return float(credit[comparable].sum() / n_pairs)


def top_k_lift(time, event, score, fraction: float = 0.15) -> float:
    """Event-rate lift in the top score fraction vs the whole evaluation set.

    Ranking is by descending score with ties broken by subject index, so the
    selected group is deterministic.
    """
    t = np.asarray(time, dtype=float)
    e = np.asarray(event, dtype=bool)
    s = np.asarray(score, dtype=float)
    if not (t.shape == e.shape == s.shape) or t.ndim != 1:
        raise ValueError("time, event, and score must be equal-length vectors")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n = t.shape[0]
    base_rate = e.mean()
    if base_rate == 0:
        raise ValueError("no observed events; lift is undefined")
    order = np.lexsort((np.arange(n), -s))
    m = math.ceil(fraction * n)
    selected_rate = e[order[:m]].mean()
    return float(selected_rate / base_rate)


def _stratification_key(data: SurvivalDataset) -> np.ndarray:
    """Joint event-pattern key over the three highest-prevalence outcomes."""
    prevalence = np.array([c.event.mean() for c in data.outcomes])
    top = np.argsort(-prevalence, kind="stable")[:3]
    key = np.zeros(data.n_subjects, dtype=np.int64)
    for j, k in enumerate(top):
        key += data.outcomes[k].event.astype(np.int64) << j
    return key


def assign_folds(data: SurvivalDataset, n_folds: int, rng: np.random.Generator,
                 stratify: bool = True) -> np.ndarray:
    """Assign each subject to a fold, stratified on the joint event key."""
    n = data.n_subjects
    fold_id = np.empty(n, dtype=np.int64)
    key = _stratification_key(data) if stratify else np.zeros(n, dtype=np.int64)
    offset = 0
    for stratum in np.unique(key):
        idx = np.flatnonzero(key == stratum)
        perm = rng.permutation(idx)
        fold_id[perm] = (np.arange(perm.size) + offset) % n_folds
        offset += perm.size
    return fold_id


def fold_hash(fold_id: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(fold_id, dtype=np.int64).tobytes()).hexdigest()


def default_grids(p: int, k: int, rank_grid=None, lam_grid=None,
                  residual_lam_grid=None, factor_lam: float = 0.01,
                  residual_kind: str = "l1") -> dict:
    """Default hyperparameter grids per method; all overridable via config."""
    if rank_grid is None:
        rank_grid = sorted(set([1, 2, 3, min(p, k)]))
    rank_grid = [r for r in rank_grid if 1 <= r <= min(p, k)]
    if lam_grid is None:
        lam_grid = list(np.logspace(-3, 1, 7))
    if residual_lam_grid is None:
        residual_lam_grid = list(lam_grid)
    grids = {
        "cox": [{}],
        "cox-lasso": [{"lam": lam} for lam in lam_grid],
        "cox-ridge": [{"lam": lam} for lam in lam_grid],
        "lr-mtl-target": [
            {"rank": r, "lam": lam} for r in rank_grid for lam in lam_grid
        ],
        "lr-mtl-source": [
            {"rank": r, "lam": lam} for r in rank_grid for lam in lam_grid
        ],
        "lr-mtl-both": [
            {"rank": r, "lam": lam} for r in rank_grid for lam in lam_grid
        ],
        "cox-transfer": [
            {"residual_lam": lam, "residual_kind": residual_kind}
            for lam in residual_lam_grid
        ],
        "core-cox": [
            {"rank": r, "factor_lam": factor_lam, "residual_lam": lam,
             "residual_kind": residual_kind}
            for r in rank_grid for lam in residual_lam_grid
        ],
    }
    return grids


def _source_cache(source: SurvivalDataset, key: tuple, builder):
    cached = source.cache.get(key)
    if cached is None:
        cached = builder()
        source.cache[key] = cached
    return cached


def fit_method(name: str, source: SurvivalDataset | None,
               target: SurvivalDataset, params: dict) -> CoefficientMatrix:
    """Fit one benchmark method and return its p x K coefficient matrix.

    Source-only computations (stage-1 factors, source-only fits) are cached
    on the source dataset object, keyed by hyperparameters.
    """
    p_names, o_names = target.predictor_names, target.outcome_names
    kk = target.n_outcomes
    if name == "cox":
        cols = [fit_cox(target, k)[0] for k in range(kk)]
        return CoefficientMatrix(np.column_stack(cols), p_names, o_names)
    if name in ("cox-lasso", "cox-ridge"):
        kind = "l1" if name == "cox-lasso" else "l2"
        pen = PenaltySpec(kind, params["lam"])
        cols = [fit_cox_penalized(target, k, pen)[0] for k in range(kk)]
        return CoefficientMatrix(np.column_stack(cols), p_names, o_names)
    if name == "lr-mtl-target":
        factors, _ = fit_lowrank_mtl(target, params["rank"],
                                     PenaltySpec("l2", params["lam"]))
        return materialize(factors, p_names, o_names)
    if source is None:
        raise ValueError(f"method {name!r} requires a source dataset")
    if name == "lr-mtl-source":
        factors = _source_cache(
            source, ("lr-mtl-source", params["rank"], params["lam"]),
            lambda: fit_lowrank_mtl(source, params["rank"],
                                    PenaltySpec("l2", params["lam"]))[0],
        )
        return materialize(factors, p_names, o_names)
    if name == "lr-mtl-both":
        pooled = pool_datasets(source, target)
        factors, _ = fit_lowrank_mtl(pooled, params["rank"],
                                     PenaltySpec("l2", params["lam"]))
        return materialize(factors, p_names, o_names)
    if name == "cox-transfer":
        pen = PenaltySpec(params.get("residual_kind", "l1"),
                          params["residual_lam"])
        cols = []
        for k in range(kk):
            source_beta = _source_cache(
                source, ("cox-transfer-source", k),
                lambda k=k: fit_cox_penalized(source, k,
                                              PenaltySpec("l2", 1e-4))[0],
            )
            beta, _ = fit_cox_transfer(source, target, k, pen,
                                       source_beta=source_beta)
            cols.append(beta)
        return CoefficientMatrix(np.column_stack(cols), p_names, o_names)
    if name == "core-cox":
        factor_lam = params.get("factor_lam", 0.01)
        factors = _source_cache(
            source, ("core-cox-stage1", params["rank"], factor_lam),
            lambda: fit_lowrank_mtl(source, params["rank"],
                                    PenaltySpec("l2", factor_lam))[0],
        )
        pen = PenaltySpec(params.get("residual_kind", "l1"),
                          params["residual_lam"])
        fit = fit_core_cox(source, target, params["rank"],
                           PenaltySpec("l2", factor_lam), pen,
                           stage1_factors=factors)
        return fit.target_matrix
    raise ValueError(f"unknown method {name!r}; expected one of {METHOD_NAMES}")


def _score_on_fold(b: CoefficientMatrix, eval_data: SurvivalDataset,
                   criterion: str, lift_fraction: float = 0.15):
    """Per-outcome validation scores; NaN where an outcome is unusable."""
    kk = eval_data.n_outcomes
    cindex = np.full(kk, np.nan)
    lift = np.full(kk, np.nan)
    for k in range(kk):
        col = eval_data.outcomes[k]
        scores = eval_data.covariates @ b.values[:, k]
        if criterion == "loglik":
            if col.n_events >= 1:
                cindex[k] = -neg_log_partial_likelihood(eval_data, k,
                                                        b.values[:, k])
            continue
        if col.n_events < 1:
            continue
        try:
            cindex[k] = harrell_c_index(col.time, col.event, scores)
        except ValueError:
            continue
        lift[k] = top_k_lift(col.time, col.event, scores, lift_fraction)
    return cindex, lift


def tune_on_folds(name: str, source: SurvivalDataset | None,
                  train: SurvivalDataset, grid: list, n_folds: int,
                  rng: np.random.Generator, criterion: str = "cindex",
                  stratify: bool = True) -> dict:
    """Pick grid point maximizing the mean validation score over inner folds.

    `criterion` is "cindex" (mean validation C-index across outcome tasks)
    or "loglik" (mean validation partial likelihood; truth-free alternative
    for coefficient studies). Inner folds with zero events for an outcome
    are skipped for that outcome with a logged warning.
    """
    if len(grid) == 1:
        return dict(grid[0])
    inner_id = assign_folds(train, n_folds, rng, stratify=stratify)
    splits = []
    for f in range(n_folds):
        tr = np.flatnonzero(inner_id != f)
        va = np.flatnonzero(inner_id == f)
        splits.append((train.subset(tr), train.subset(va)))
    best_score, best = -np.inf, dict(grid[0])
    for params in grid:
        scores = []
        for fit_data, val_data in splits:
            try:
                b = fit_method(name, source, fit_data, params)
            except Exception as exc:  # noqa: BLE001 - tuning failures skip the point
                logger.warning("inner fit failed for %s %s: %s", name, params, exc)
                continue
            cindex, _ = _score_on_fold(b, val_data, criterion)
            if np.all(np.isnan(cindex)):
                logger.warning("no usable outcomes in an inner fold for %s", name)
                continue
            scores.append(np.nanmean(cindex))
        if scores:
            mean_score = float(np.mean(scores))
            if mean_score > best_score:
                best_score, best = mean_score, dict(params)
    return best


def run_nested_cv(source: SurvivalDataset | None, target: SurvivalDataset,
                  methods, grids: dict, plan: CVPlan,
                  lift_fraction: float = 0.15,
                  failure_log: list | None = None) -> list:
    """Repeated-split nested CV for all methods on identical outer folds.

    Source data participate in fitting only; folds are drawn from the target
    cohort. Failures of a (fold, method) unit are appended to `failure_log`
    (when provided) and skipped instead of aborting the run.
    """
    for name in methods:
        if name not in METHOD_NAMES:
            raise ValueError(f"unknown method {name!r}")
        if not grids.get(name):
            raise ValueError(f"empty hyperparameter grid for {name!r}")
    rng = np.random.default_rng(np.random.SeedSequence(plan.seed))
    outer_id = assign_folds(target, plan.outer_folds, rng,
                            stratify=plan.stratify_by_event)
    fhash = fold_hash(outer_id)
    results = []
    for fold in range(plan.outer_folds):
        train_idx = np.flatnonzero(outer_id != fold)
        test_idx = np.flatnonzero(outer_id == fold)
        train = target.subset(train_idx)
        test = target.subset(test_idx)
        inner_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=plan.seed, spawn_key=(fold + 1,))
        )
        inner_state = inner_rng.bit_generator.state
        for name in methods:
            inner_rng.bit_generator.state = inner_state  # same draws per method
            try:
                chosen = tune_on_folds(name, source, train, grids[name],
                                       plan.inner_folds, inner_rng,
                                       stratify=plan.stratify_by_event)
                b = fit_method(name, source, train, chosen)
            except Exception as exc:  # noqa: BLE001 - unit-level failure policy
                if failure_log is None:
                    raise
                failure_log.append({"seed": plan.seed, "fold": fold,
                                    "method": name, "error": str(exc)})
                continue
            cindex, lift = _score_on_fold(b, test, "cindex", lift_fraction)
            results.append(MethodResult(
                method_name=name,
                seed=plan.seed,
                fold_index=fold,
                per_outcome_cindex=[float(c) for c in cindex],
                per_outcome_lift=[float(v) for v in lift],
                chosen_hyperparameters=dict(chosen),
                fold_hash=fhash,
            ))
    return results


def bootstrap_hazard_ratios(fit_fn, data: SurvivalDataset, outcome_index: int,
                            n_boot: int = 200, level: float = 0.95,
                            seed: int = 0, method: str = "",
                            max_failure_fraction: float = 0.2):
    """Nonparametric subject-level bootstrap percentile intervals on HR scale.

    `fit_fn(data, outcome_index)` returns a coefficient vector. Replicates
    that raise or return non-finite values are dropped; more than
    `max_failure_fraction` failures is an error.
    """
    if n_boot < 100:
        raise ValueError("n_boot must be at least 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    point = np.asarray(fit_fn(data, outcome_index), dtype=float)
    n = data.n_subjects
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    draws = []
    failures = 0
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        try:
            beta = np.asarray(fit_fn(data.subset(idx), outcome_index),
                              dtype=float)
        except Exception:  # noqa: BLE001 - replicate-level failures are dropped
            failures += 1
            continue
        if not np.all(np.isfinite(beta)):
            failures += 1
            continue
        draws.append(beta)
    if failures > max_failure_fraction * n_boot:
        raise RuntimeError(
            f"{failures}/{n_boot} bootstrap replicates failed"
        )
    draws = np.array(draws)
    alpha = (1.0 - level) / 2.0
    lo = np.quantile(draws, alpha, axis=0)
    hi = np.quantile(draws, 1.0 - alpha, axis=0)
    rows = []
    for j, name in enumerate(data.predictor_names):
        hr = float(np.exp(point[j]))
        ci_low = float(np.exp(min(lo[j], point[j])))
        ci_high = float(np.exp(max(hi[j], point[j])))
        rows.append(HazardRatioRow(name, hr, ci_low, ci_high, method))
    return rows

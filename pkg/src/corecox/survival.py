"""Core survival data types and the Cox partial-likelihood kernel.

All estimators in this package reduce to evaluations of the event-averaged
negative log Cox partial likelihood (Breslow tie handling) and its
derivatives, implemented here once. Types are immutable after construction
and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OutcomeColumn",
    "SurvivalDataset",
    "CoefficientMatrix",
    "LowRankFactors",
    "neg_log_partial_likelihood",
    "plik_gradient",
    "plik_value_grad",
    "plik_value_grad_hess",
    "log_risk_scores",
    "materialize",
]


def _as_float_array(x, name, ndim):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class OutcomeColumn:
    """One outcome's follow-up time and event indicator for n subjects."""

    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        time = _as_float_array(self.time, "time", 1)
        event = np.asarray(self.event, dtype=bool)
        if event.shape != time.shape:
            raise ValueError("time and event must have equal length")
        if not np.all(np.isfinite(time)):
            raise ValueError("times must be finite")
        if np.any(time < 0):
            raise ValueError("times must be non-negative")
        time.setflags(write=False)
        event.setflags(write=False)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def __len__(self) -> int:
        return self.time.shape[0]


@dataclass(frozen=True)
class SurvivalDataset:
    """Covariate matrix plus per-outcome (time, event) columns.

    The unit of fitting and evaluation: n subjects, p predictors, K outcomes.
    `cache` holds derived per-outcome kernel workspaces and fitted-model
    caches; it never affects equality or the data contract.
    """

    covariates: np.ndarray
    outcomes: tuple
    predictor_names: tuple
    outcome_names: tuple
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        x = _as_float_array(self.covariates, "covariates", 2)
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite (complete-case contract)")
        outcomes = tuple(self.outcomes)
        pnames = tuple(str(s) for s in self.predictor_names)
        onames = tuple(str(s) for s in self.outcome_names)
        n, p = x.shape
        if p < 1:
            raise ValueError("need at least one predictor")
        if len(outcomes) < 1:
            raise ValueError("need at least one outcome")
        if len(pnames) != p:
            raise ValueError("predictor_names length must equal p")
        if len(onames) != len(outcomes):
            raise ValueError("outcome_names length must equal number of outcomes")
        for col in outcomes:
            if not isinstance(col, OutcomeColumn):
                raise TypeError("outcomes must be OutcomeColumn instances")
            if len(col) != n:
                raise ValueError("every outcome column must have exactly n entries")
        x.setflags(write=False)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "predictor_names", pnames)
        object.__setattr__(self, "outcome_names", onames)

    @property
    def n_subjects(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_predictors(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)

    def event_count(self, outcome_index: int) -> int:
        return self.outcomes[outcome_index].n_events

    def subset(self, indices) -> "SurvivalDataset":
        """Row subset (or resample, with repeated indices) of the dataset."""
        idx = np.asarray(indices)
        return SurvivalDataset(
            covariates=self.covariates[idx],
            outcomes=tuple(
                OutcomeColumn(c.time[idx], c.event[idx]) for c in self.outcomes
            ),
            predictor_names=self.predictor_names,
            outcome_names=self.outcome_names,
        )

    def same_schema(self, other: "SurvivalDataset") -> bool:
        return (
            self.predictor_names == other.predictor_names
            and self.outcome_names == other.outcome_names
        )


@dataclass(frozen=True)
class CoefficientMatrix:
    """p x K matrix of per-outcome Cox log-hazard-ratio vectors."""

    values: np.ndarray
    predictor_names: tuple
    outcome_names: tuple

    def __post_init__(self):
        v = _as_float_array(self.values, "values", 2)
        if not np.all(np.isfinite(v)):
            raise ValueError("coefficient matrix entries must be finite")
        pnames = tuple(str(s) for s in self.predictor_names)
        onames = tuple(str(s) for s in self.outcome_names)
        if v.shape != (len(pnames), len(onames)):
            raise ValueError(
                f"values shape {v.shape} inconsistent with names "
                f"({len(pnames)}, {len(onames)})"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "predictor_names", pnames)
        object.__setattr__(self, "outcome_names", onames)

    def column(self, k: int) -> np.ndarray:
        return self.values[:, k]


@dataclass(frozen=True)
class LowRankFactors:
    """Factor pair (u: p x r, v: K x r) representing a rank-r coefficient matrix."""

    u: np.ndarray
    v: np.ndarray
    rank: int

    def __post_init__(self):
        u = _as_float_array(self.u, "u", 2)
        v = _as_float_array(self.v, "v", 2)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("factor entries must be finite")
        r = int(self.rank)
        if r < 1 or u.shape[1] != r or v.shape[1] != r:
            raise ValueError("rank must be positive and match factor widths")
        if r > min(u.shape[0], v.shape[0]):
            raise ValueError("rank must not exceed min(p, K)")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "rank", r)


class _OutcomeWorkspace:
    """Precomputed risk-set structure for one (dataset, outcome) pair.

    Subjects are sorted once by descending time; Breslow tie groups share a
    risk-set denominator obtained from group-end suffix sums.
    """

    def __init__(self, covariates: np.ndarray, outcome: OutcomeColumn):
        time = outcome.time
        event = outcome.event
        n = time.shape[0]
        if n < 2:
            raise ValueError("fitting requires at least 2 subjects")
        order = np.argsort(-time, kind="stable")
        ts = time[order]
        ev = event[order]
        self.x_sorted = covariates[order]
        new_group = np.concatenate(([True], ts[1:] != ts[:-1]))
        group_id = np.cumsum(new_group) - 1
        n_groups = group_id[-1] + 1
        group_last = np.zeros(n_groups, dtype=np.intp)
        group_last[group_id] = np.arange(n)
        ev_pos = np.flatnonzero(ev)
        if ev_pos.size == 0:
            raise ValueError("outcome has zero events")
        d_g = np.bincount(group_id[ev_pos], minlength=n_groups)
        active = np.flatnonzero(d_g > 0)
        self.group_last = group_last[active]
        self.d_g = d_g[active].astype(float)
        p = covariates.shape[1]
        sum_x = np.zeros((active.size, p))
        remap = -np.ones(n_groups, dtype=np.intp)
        remap[active] = np.arange(active.size)
        np.add.at(sum_x, remap[group_id[ev_pos]], self.x_sorted[ev_pos])
        self.sum_x_events = sum_x
        self.ev_pos = ev_pos
        self.ev_group = remap[group_id[ev_pos]]
        self.n_events = float(ev_pos.size)

    def value(self, beta: np.ndarray) -> float:
        eta = self.x_sorted @ beta
        m = eta.max()
        w = np.exp(eta - m)
        s0 = np.cumsum(w)[self.group_last]
        loglik = eta[self.ev_pos].sum() - (
            self.d_g * (m + np.log(s0))
        ).sum()
        return -loglik / self.n_events

    def value_grad(self, beta: np.ndarray):
        eta = self.x_sorted @ beta
        m = eta.max()
        w = np.exp(eta - m)
        c0 = np.cumsum(w)
        s0 = c0[self.group_last]
        c1 = np.cumsum(w[:, None] * self.x_sorted, axis=0)
        s1 = c1[self.group_last]
        loglik = eta[self.ev_pos].sum() - (self.d_g * (m + np.log(s0))).sum()
        grad = -(self.sum_x_events - self.d_g[:, None] * s1 / s0[:, None]).sum(
            axis=0
        ) / self.n_events
        return -loglik / self.n_events, grad

    def value_grad_hess(self, beta: np.ndarray):
        eta = self.x_sorted @ beta
        m = eta.max()
        w = np.exp(eta - m)
        c0 = np.cumsum(w)
        s0 = c0[self.group_last]
        xw = w[:, None] * self.x_sorted
        c1 = np.cumsum(xw, axis=0)
        s1 = c1[self.group_last]
        c2 = np.cumsum(xw[:, :, None] * self.x_sorted[:, None, :], axis=0)
        s2 = c2[self.group_last]
        loglik = eta[self.ev_pos].sum() - (self.d_g * (m + np.log(s0))).sum()
        grad = -(self.sum_x_events - self.d_g[:, None] * s1 / s0[:, None]).sum(
            axis=0
        ) / self.n_events
        mu = s1 / s0[:, None]
        hess = (
            self.d_g[:, None, None]
            * (s2 / s0[:, None, None] - mu[:, :, None] * mu[:, None, :])
        ).sum(axis=0) / self.n_events
        return -loglik / self.n_events, grad, hess


def _workspace(data: SurvivalDataset, outcome_index: int) -> _OutcomeWorkspace:
    k = int(outcome_index)
    if not 0 <= k < data.n_outcomes:
        raise IndexError(f"outcome index {k} out of range")
    key = ("kernel", k)
    ws = data.cache.get(key)
    if ws is None:
        ws = _OutcomeWorkspace(data.covariates, data.outcomes[k])
        data.cache[key] = ws
    return ws


def _check_beta(data: SurvivalDataset, beta) -> np.ndarray:
    b = np.asarray(beta, dtype=float)
    if b.shape != (data.n_predictors,):
        raise ValueError(
            f"beta has shape {b.shape}, expected ({data.n_predictors},)"
        )
    if not np.all(np.isfinite(b)):
        raise ValueError("beta must be finite")
    return b


def neg_log_partial_likelihood(
    data: SurvivalDataset, outcome_index: int, beta
) -> float:
    """Event-averaged negative log Cox partial likelihood (Breslow ties)."""
    b = _check_beta(data, beta)
    return _workspace(data, outcome_index).value(b)


def plik_gradient(data: SurvivalDataset, outcome_index: int, beta) -> np.ndarray:
    """Gradient of `neg_log_partial_likelihood` with respect to beta."""
    b = _check_beta(data, beta)
    return _workspace(data, outcome_index).value_grad(b)[1]


def plik_value_grad(data: SurvivalDataset, outcome_index: int, beta):
    """(objective, gradient) in one pass; the optimizer entry point."""
    b = _check_beta(data, beta)
    return _workspace(data, outcome_index).value_grad(b)


def plik_value_grad_hess(data: SurvivalDataset, outcome_index: int, beta):
    """(objective, gradient, Hessian); used by Newton solvers for small p."""
    b = _check_beta(data, beta)
    return _workspace(data, outcome_index).value_grad_hess(b)


def log_risk_scores(data: SurvivalDataset, beta) -> np.ndarray:
    """Linear log-risk scores x_i' beta; used for ranking only."""
    b = _check_beta(data, beta)
    return data.covariates @ b


def materialize(
    factors: LowRankFactors, predictor_names=None, outcome_names=None
) -> CoefficientMatrix:
    """Expand factors to the dense p x K coefficient matrix u v'."""
    values = factors.u @ factors.v.T
    p, k = values.shape
    if predictor_names is None:
        predictor_names = tuple(f"x{j}" for j in range(p))
    if outcome_names is None:
        outcome_names = tuple(f"y{j}" for j in range(k))
    return CoefficientMatrix(values, predictor_names, outcome_names)

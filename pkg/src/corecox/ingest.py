"""CSV cohort ingestion with schema validation and complete-case filtering.

Predictors are standardized to mean 0, variance 1 using statistics from the
ingested cohort; the transform is stored so the target cohort can reuse the
source cohort's statistics (coefficients then share a scale across cohorts).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .survival import OutcomeColumn, SurvivalDataset

__all__ = ["Standardization", "IngestResult", "ingest_csv", "ingest_pair",
           "write_dataset_csv"]


@dataclass(frozen=True)
class Standardization:
    """Stored per-predictor centering and scaling transform."""

    predictor_names: tuple
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.scale


@dataclass(frozen=True)
class IngestResult:
    dataset: SurvivalDataset
    standardization: Standardization
    missingness: dict
    n_rows_read: int
    n_rows_dropped: int


def _parse_schema(columns):
    columns = list(columns)
    if len(columns) < 4:
        raise ValueError("CSV needs an id column, time/event pairs, and predictors")
    id_col = columns[0]
    time_cols = {c[len("time_"):]: c for c in columns if c.startswith("time_")}
    event_cols = {c[len("event_"):]: c for c in columns if c.startswith("event_")}
    if set(time_cols) != set(event_cols):
        missing = set(time_cols) ^ set(event_cols)
        raise ValueError(f"unpaired time_/event_ columns for outcomes: {sorted(missing)}")
    if not time_cols:
        raise ValueError("no time_<name>/event_<name> outcome columns found")
    outcome_names = sorted(time_cols)
    used = {id_col} | set(time_cols.values()) | set(event_cols.values())
    predictors = [c for c in columns if c not in used]
    if not predictors:
        raise ValueError("no predictor columns found")
    return id_col, outcome_names, time_cols, event_cols, predictors


def ingest_csv(path, standardization: Standardization | None = None) -> IngestResult:
    """Read one cohort CSV into a SurvivalDataset (complete-case contract).

    Rows with any missing or non-parsable cell are dropped and reported in
    the per-column missingness map. When `standardization` is given (the
    source cohort's statistics) it is applied instead of cohort-own stats.
    """
    raw = pd.read_csv(path, dtype=str, encoding="utf-8")
    _, outcome_names, time_cols, event_cols, predictors = _parse_schema(raw.columns)
    n_read = len(raw)
    if n_read == 0:
        raise ValueError("empty CSV")
    numeric_cols = (
        [time_cols[o] for o in outcome_names]
        + [event_cols[o] for o in outcome_names]
        + predictors
    )
    numeric = raw[numeric_cols].apply(pd.to_numeric, errors="coerce")
    missingness = {c: float(numeric[c].isna().mean()) for c in numeric_cols}
    keep = ~numeric.isna().any(axis=1)
    n_dropped = int((~keep).sum())
    data = numeric[keep]
    if len(data) == 0:
        report = {c: f for c, f in missingness.items() if f > 0}
        raise ValueError(
            f"empty dataset after complete-case filtering; missingness: {report}"
        )
    for o in outcome_names:
        ev = data[event_cols[o]].to_numpy()
        if not np.isin(ev, (0.0, 1.0)).all():
            raise ValueError(f"event column for outcome {o!r} has values outside {{0, 1}}")
        if (data[time_cols[o]].to_numpy() < 0).any():
            raise ValueError(f"negative times in outcome {o!r}")
    x = data[predictors].to_numpy(dtype=float)
    if standardization is None:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale == 0, 1.0, scale)
        standardization = Standardization(tuple(predictors), mean, scale)
    else:
        if standardization.predictor_names != tuple(predictors):
            raise ValueError("standardization predictor names do not match CSV")
    x = standardization.apply(x)
    outcomes = tuple(
        OutcomeColumn(data[time_cols[o]].to_numpy(dtype=float),
                      data[event_cols[o]].to_numpy() > 0.5)
        for o in outcome_names
    )
    dataset = SurvivalDataset(x, outcomes, tuple(predictors), tuple(outcome_names))
    return IngestResult(dataset, standardization, missingness, n_read, n_dropped)


def ingest_pair(source_path, target_path, policy: str = "source"):
    """Ingest source and target cohorts under a standardization policy.

    "source" (default): both cohorts standardized by source-cohort
    statistics so coefficients share a scale. "per-cohort": each cohort
    standardized by its own statistics.
    """
    if policy not in ("source", "per-cohort"):
        raise ValueError("policy must be 'source' or 'per-cohort'")
    source = ingest_csv(source_path)
    target = ingest_csv(
        target_path,
        standardization=source.standardization if policy == "source" else None,
    )
    if source.dataset.outcome_names != target.dataset.outcome_names:
        raise ValueError("source and target must share outcome columns")
    return source, target


def write_dataset_csv(dataset: SurvivalDataset, path):
    """Write a dataset back to the ingestion CSV schema."""
    frame = {"subject_id": np.arange(dataset.n_subjects)}
    for name, col in zip(dataset.outcome_names, dataset.outcomes):
        frame[f"time_{name}"] = col.time
        frame[f"event_{name}"] = col.event.astype(int)
    for j, name in enumerate(dataset.predictor_names):
        frame[name] = dataset.covariates[:, j]
    pd.DataFrame(frame).to_csv(path, index=False)

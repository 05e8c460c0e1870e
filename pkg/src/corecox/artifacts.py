"""Experiment configuration and model-artifact serialization.

Configs load from YAML; fingerprints are SHA-256 over the canonical
(sorted-key) JSON form, so semantically identical configs share a
fingerprint. Model artifacts round-trip losslessly: matrices serialize via
JSON's shortest round-trip float representation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .estimators import FitReport
from .simulation import SimConfig
from .survival import CoefficientMatrix

FORMAT_VERSION = "1"

__all__ = ["ExperimentConfig", "ModelArtifact", "load_config", "fingerprint",
           "FORMAT_VERSION"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one benchmark / fit / simulate run."""

    source_csv: str | None = None
    target_csv: str | None = None
    sim: SimConfig | None = None
    methods: tuple = ("cox", "core-cox")
    rank_grid: tuple | None = None
    lam_grid: tuple | None = None
    residual_lam_grid: tuple | None = None
    factor_lam: float = 0.01
    residual_kind: str = "l1"
    outer_folds: int = 5
    inner_folds: int = 4
    stratify_by_event: bool = True
    seeds: tuple = (0,)
    lift_fraction: float = 0.15
    n_boot: int = 200
    n_replicates: int = 50
    n_experiments: int = 200
    standardize_policy: str = "source"
    per_outcome_residual_lambda: bool = False

    def __post_init__(self):
        has_paths = self.source_csv is not None and self.target_csv is not None
        has_sim = self.sim is not None
        if has_paths == has_sim:
            raise ValueError("exactly one of {data paths, sim config} must be set")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.methods:
            raise ValueError("at least one method is required")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for name in ("rank_grid", "lam_grid", "residual_lam_grid"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.sim is not None:
            d["sim"] = dataclasses.asdict(self.sim)
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        return d


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    sim = raw.pop("sim", None)
    if sim is not None:
        sim = SimConfig(**sim)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(sim=sim, **raw)


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(config: ExperimentConfig) -> str:
    """Stable hash of the canonical config; key order never matters."""
    return hashlib.sha256(
        _canonical_json(config.to_dict()).encode("utf-8")
    ).hexdigest()


def _report_dict(report: FitReport) -> dict:
    return {
        "converged": bool(report.converged),
        "iterations": int(report.iterations),
        "final_objective": float(report.final_objective),
        "grad_norm_at_exit": float(report.grad_norm_at_exit),
        "message": report.message,
    }


@dataclass(frozen=True)
class ModelArtifact:
    """Serializable fitted model: coefficients plus provenance."""

    method: str
    predictor_names: tuple
    outcome_names: tuple
    matrix: np.ndarray
    config_fingerprint: str
    hyperparameters: dict = field(default_factory=dict)
    source_matrix: np.ndarray | None = None
    residual: np.ndarray | None = None
    reports: list = field(default_factory=list)
    format_version: str = FORMAT_VERSION

    def coefficient_matrix(self) -> CoefficientMatrix:
        return CoefficientMatrix(self.matrix, self.predictor_names,
                                 self.outcome_names)

    def save(self, path):
        payload = {
            "format_version": self.format_version,
            "method": self.method,
            "predictor_names": list(self.predictor_names),
            "outcome_names": list(self.outcome_names),
            "matrix": np.asarray(self.matrix).tolist(),
            "config_fingerprint": self.config_fingerprint,
            "hyperparameters": self.hyperparameters,
            "reports": self.reports,
        }
        if self.source_matrix is not None:
            payload["source_matrix"] = np.asarray(self.source_matrix).tolist()
            payload["residual"] = np.asarray(self.residual).tolist()
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)

    @staticmethod
    def load(path) -> "ModelArtifact":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported artifact format {payload.get('format_version')!r}"
            )
        source = payload.get("source_matrix")
        residual = payload.get("residual")
        return ModelArtifact(
            method=payload["method"],
            predictor_names=tuple(payload["predictor_names"]),
            outcome_names=tuple(payload["outcome_names"]),
            matrix=np.array(payload["matrix"], dtype=float),
            config_fingerprint=payload["config_fingerprint"],
            hyperparameters=payload.get("hyperparameters", {}),
            source_matrix=None if source is None else np.array(source, dtype=float),
            residual=None if residual is None else np.array(residual, dtype=float),
            reports=payload.get("reports", []),
        )

    @staticmethod
    def report_entries(reports) -> list:
        if isinstance(reports, FitReport):
            return [_report_dict(reports)]
        return [_report_dict(r) for r in reports]

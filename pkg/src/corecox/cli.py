"""Command-line front end: benchmark, fit, simulate, validate-data.

All behavior flows from flags and the YAML experiment config; outputs are
deterministic given the config, and every output file embeds the format
version and the config fingerprint.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import simulation
from .artifacts import FORMAT_VERSION, ExperimentConfig, ModelArtifact, fingerprint, load_config
from .estimators import PenaltySpec
from .evaluation import CVPlan, default_grids, fit_method, run_nested_cv, tune_on_folds
from .ingest import ingest_csv, ingest_pair
from .simulation import generate, run_coverage_study, run_recovery_study, summarize_recovery
from .transfer import fit_core_cox

logger = logging.getLogger(__name__)


def _build_data(config: ExperimentConfig):
    if config.sim is not None:
        source, target, _ = generate(config.sim)
        return source, target
    src, tgt = ingest_pair(config.source_csv, config.target_csv,
                           policy=config.standardize_policy)
    return src.dataset, tgt.dataset


def _build_grids(config: ExperimentConfig, p: int, k: int) -> dict:
    return default_grids(
        p, k,
        rank_grid=list(config.rank_grid) if config.rank_grid else None,
        lam_grid=list(config.lam_grid) if config.lam_grid else None,
        residual_lam_grid=(list(config.residual_lam_grid)
                           if config.residual_lam_grid else None),
        factor_lam=config.factor_lam,
        residual_kind=config.residual_kind,
    )


def _write_csv(frame: pd.DataFrame, path: Path, fp: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# corecox format_version={FORMAT_VERSION} fingerprint={fp}\n")
        frame.to_csv(fh, index=False)


def run_benchmark(config: ExperimentConfig, out_dir, jobs: int = 1):
    """Execute the nested-CV benchmark and write metrics, summary, manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fp = fingerprint(config)
    source, target = _build_data(config)
    grids = _build_grids(config, target.n_predictors, target.n_outcomes)
    failure_log: list = []

    def one_seed(seed):
        plan = CVPlan(config.outer_folds, config.inner_folds, seed,
                      config.stratify_by_event)
        failures: list = []
        results = run_nested_cv(source, target, config.methods, grids, plan,
                                lift_fraction=config.lift_fraction,
                                failure_log=failures)
        return results, failures

    if jobs > 1:
        # threads keep the source-side fit caches shared across seeds
        outputs = Parallel(n_jobs=jobs, prefer="threads")(
            delayed(one_seed)(s) for s in config.seeds
        )
    else:
        outputs = [one_seed(s) for s in config.seeds]

    rows = []
    for results, failures in outputs:
        failure_log.extend(failures)
        for res in results:
            for k, name in enumerate(target.outcome_names):
                rows.append({
                    "seed": res.seed,
                    "fold": res.fold_index,
                    "method": res.method_name,
                    "outcome": name,
                    "cindex": res.per_outcome_cindex[k],
                    "lift": res.per_outcome_lift[k],
                    "chosen": json.dumps(res.chosen_hyperparameters,
                                         sort_keys=True),
                    "fold_hash": res.fold_hash,
                })
    metrics = pd.DataFrame.from_records(rows)
    _write_csv(metrics, out / "metrics.csv", fp)

    summary = {"format_version": FORMAT_VERSION, "fingerprint": fp,
               "methods": {}}
    if len(metrics):
        grouped = metrics.groupby(["method", "outcome"])
        for (method, outcome), g in grouped:
            summary["methods"].setdefault(method, {})[outcome] = {
                "cindex_mean": float(np.nanmean(g["cindex"])),
                "cindex_std": float(np.nanstd(g["cindex"])),
                "lift_mean": float(np.nanmean(g["lift"])),
                "lift_std": float(np.nanstd(g["lift"])),
                "n": int(len(g)),
            }
    expected = len(config.seeds) * config.outer_folds * len(config.methods)
    summary["completed_units"] = expected - len(failure_log)
    summary["expected_units"] = expected
    summary["completeness"] = (expected - len(failure_log)) / expected
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    manifest = {"format_version": FORMAT_VERSION, "fingerprint": fp,
                "failures": failure_log,
                "completed_units": summary["completed_units"]}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return metrics, summary


def run_fit(config: ExperimentConfig, method: str, out_dir):
    """Tune (when a grid applies), fit one method on the full target, save."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fp = fingerprint(config)
    source, target = _build_data(config)
    grids = _build_grids(config, target.n_predictors, target.n_outcomes)
    grid = grids[method]
    rng = np.random.default_rng(np.random.SeedSequence(config.seeds[0]))
    chosen = tune_on_folds(method, source, target, grid, config.inner_folds,
                           rng)
    if method == "core-cox":
        fit = fit_core_cox(
            source, target, chosen["rank"],
            PenaltySpec("l2", chosen.get("factor_lam", config.factor_lam)),
            PenaltySpec(chosen.get("residual_kind", config.residual_kind),
                        chosen["residual_lam"]),
        )
        reports = ModelArtifact.report_entries(
            [fit.reports["stage1"], *fit.reports["stage2"]]
        )
        artifact = ModelArtifact(
            method=method,
            predictor_names=target.predictor_names,
            outcome_names=target.outcome_names,
            matrix=fit.target_matrix.values,
            config_fingerprint=fp,
            hyperparameters=chosen,
            source_matrix=fit.source_matrix.values,
            residual=fit.residual,
            reports=reports,
        )
    else:
        b = fit_method(method, source, target, chosen)
        artifact = ModelArtifact(
            method=method,
            predictor_names=target.predictor_names,
            outcome_names=target.outcome_names,
            matrix=b.values,
            config_fingerprint=fp,
            hyperparameters=chosen,
        )
    path = out / f"model_{method}.json"
    artifact.save(path)
    return path


def run_simulate(config: ExperimentConfig, study: str, out_dir, jobs: int = 1):
    """Run the recovery and/or coverage studies and write tables + summary."""
    if config.sim is None:
        raise ValueError("simulate requires an embedded sim config")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fp = fingerprint(config)
    lines = [f"corecox simulation report (format_version={FORMAT_VERSION}, "
             f"fingerprint={fp})", "", "Generative choices:"]
    lines += [f"  - {c}" for c in simulation.GENERATIVE_CHOICES]
    if study in ("recovery", "both"):
        grids = _build_grids(config, config.sim.p, config.sim.k)
        table = run_recovery_study(config.sim, config.methods, grids,
                                   config.n_replicates, n_jobs=jobs)
        _write_csv(table.drop(columns=["rrmse_per_outcome"]),
                   out / "recovery.csv", fp)
        summary = summarize_recovery(table)
        _write_csv(summary, out / "recovery_summary.csv", fp)
        lines += ["", "Recovery study (RRMSE mean +/- se):"]
        for _, row in summary.iterrows():
            lines.append(f"  {row['method']}: {row['rrmse_mean']:.4f} "
                         f"+/- {row['rrmse_se']:.4f} (n={int(row['n'])})")
    if study in ("coverage", "both"):
        table, summary = run_coverage_study(config.sim, config.n_experiments,
                                            config.n_boot, n_jobs=jobs)
        _write_csv(table, out / "coverage.csv", fp)
        _write_csv(summary, out / "coverage_summary.csv", fp)
        lines += ["", "Coverage study (95% bootstrap intervals, log-HR scale):"]
        for _, row in summary.iterrows():
            lines.append(f"  {row['method']}: coverage={row['coverage']:.3f} "
                         f"mean width={row['width_log']:.3f}")
    with open(out / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return out


@click.group()
def main():
    """CORE-Cox: transfer learning for multi-outcome Cox survival models."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True, type=int)
def benchmark(config_path, out_dir, jobs):
    """Run the nested-CV benchmark for all configured methods and seeds."""
    config = load_config(config_path)
    _, summary = run_benchmark(config, out_dir, jobs=jobs)
    if summary["completeness"] < 1.0:
        click.echo(f"completed {summary['completeness']:.0%} of units "
                   "(see manifest.json)", err=True)
        sys.exit(1)
    click.echo(f"benchmark complete; outputs in {out_dir}")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--method", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def fit(config_path, method, out_dir):
    """Fit one method on the full target cohort and save a model artifact."""
    config = load_config(config_path)
    path = run_fit(config, method, out_dir)
    click.echo(f"model written to {path}")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--study", type=click.Choice(["recovery", "coverage", "both"]),
              default="both", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True, type=int)
def simulate(config_path, study, out_dir, jobs):
    """Run the coefficient-recovery and/or bootstrap-coverage studies."""
    config = load_config(config_path)
    out = run_simulate(config, study, out_dir, jobs=jobs)
    click.echo(f"simulation outputs in {out}")


@main.command("validate-data")
@click.option("--source", "source_path", required=True,
              type=click.Path(exists=True))
@click.option("--target", "target_path", required=True,
              type=click.Path(exists=True))
def validate_data(source_path, target_path):
    """Schema and missingness report for a source/target CSV pair."""
    for label, path in (("source", source_path), ("target", target_path)):
        try:
            res = ingest_csv(path)
        except ValueError as exc:
            click.echo(f"{label}: INVALID - {exc}", err=True)
            sys.exit(1)
        click.echo(f"{label}: {res.dataset.n_subjects} subjects after "
                   f"complete-case filtering ({res.n_rows_dropped} of "
                   f"{res.n_rows_read} rows dropped)")
        for col, frac in sorted(res.missingness.items()):
            if frac > 0:
                click.echo(f"  {col}: {frac:.1%} missing")
    click.echo("schema OK")


if __name__ == "__main__":
    main()

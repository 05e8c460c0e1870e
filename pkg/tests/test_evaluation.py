import logging

import numpy as np
import pytest

from corecox.estimators import PenaltySpec
from corecox.evaluation import (
    CVPlan,
    HazardRatioRow,
    METHOD_NAMES,
    assign_folds,
    bootstrap_hazard_ratios,
    default_grids,
    fold_hash,
    harrell_c_index,
    run_nested_cv,
    top_k_lift,
    tune_on_folds,
)
from corecox.survival import OutcomeColumn, SurvivalDataset

from conftest import cindex_oracle, lift_oracle, make_dataset


class TestHarrellCIndex:
    def test_perfect_discrimination(self):
        t = np.array([1.0, 2.0, 3.0, 4.0])
        e = np.ones(4, dtype=bool)
        score = -t  # higher score, earlier event
        assert harrell_c_index(t, e, score) == 1.0

    def test_constant_scores_give_half(self):
        t = np.array([1.0, 2.0, 3.0, 4.0])
        e = np.ones(4, dtype=bool)
        assert harrell_c_index(t, e, np.zeros(4)) == 0.5

    def test_mixed_censoring_instance_matches_oracle(self):
        t = np.array([2.0, 5.0, 3.0, 3.0, 7.0, 1.0])
        e = np.array([True, False, True, False, True, True])
        s = np.array([0.4, -0.2, 0.4, 1.1, -0.5, 2.0])
        assert harrell_c_index(t, e, s) == cindex_oracle(t, e, s)

    def test_matches_oracle_on_random_instances(self, rng):
        for _ in range(200):
            n = rng.integers(2, 30)
            t = np.round(rng.exponential(1.0, n), rng.integers(0, 3))
            e = rng.uniform(size=n) < 0.6
            s = np.round(rng.standard_normal(n), 1)
            try:
                got = harrell_c_index(t, e, s)
            except ValueError:
                with pytest.raises(ValueError):
                    _ = cindex_oracle(t, e, s)
                continue
            assert got == cindex_oracle(t, e, s)

    def test_zero_comparable_pairs_is_an_error(self):
        t = np.array([1.0, 2.0])
        e = np.array([False, False])
        with pytest.raises(ValueError, match="comparable"):
            harrell_c_index(t, e, np.array([0.1, 0.2]))

    def test_monotone_transform_invariance(self, rng):
        for _ in range(20):
            n = 25
            t = rng.exponential(1.0, n)
            e = rng.uniform(size=n) < 0.7
            s = rng.standard_normal(n)
            base = harrell_c_index(t, e, s)
            assert harrell_c_index(t, e, 3.0 * s + 2.0) == base
            assert harrell_c_index(t, e, s**3) == base

    def test_negated_scores_complement(self, rng):
        n = 40
        t = rng.exponential(1.0, n)
        e = rng.uniform(size=n) < 0.7
        s = rng.standard_normal(n)  # continuous, so no score ties
        assert harrell_c_index(t, e, s) + harrell_c_index(t, e, -s) == 1.0

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="equal-length"):
            harrell_c_index([1.0, 2.0], [True], [0.1, 0.2])


class TestTopKLift:
    def test_maximal_enrichment(self):
        n = 100
        e = np.zeros(n, dtype=bool)
        e[:10] = True  # base rate 0.10, all events in the top 15 scores
        s = -np.arange(n, dtype=float)
        lift = top_k_lift(np.ones(n), e, s, fraction=0.15)
        assert lift == pytest.approx((10 / 15) / 0.10)

    def test_constant_scores_match_enumeration(self, rng):
        n = 60
        e = rng.uniform(size=n) < 0.3
        if not e.any():
            e[0] = True
        s = np.zeros(n)
        got = top_k_lift(np.ones(n), e, s, fraction=0.2)
        assert got == lift_oracle(np.ones(n), e, s, 0.2)

    def test_matches_oracle_on_random_instances(self, rng):
        for _ in range(100):
            n = rng.integers(5, 50)
            e = rng.uniform(size=n) < 0.5
            if not e.any():
                e[rng.integers(n)] = True
            s = np.round(rng.standard_normal(n), 1)
            frac = rng.uniform(0.05, 0.9)
            assert top_k_lift(np.ones(n), e, s, frac) == \
                lift_oracle(np.ones(n), e, s, frac)

    def test_permutation_null_is_near_one(self, rng):
        n = 1000
        lifts = []
        for _ in range(30):
            e = rng.uniform(size=n) < 0.2
            s = rng.standard_normal(n)
            lifts.append(top_k_lift(np.ones(n), e, s))
        assert abs(np.mean(lifts) - 1.0) < 0.15

    def test_monotone_transform_invariance(self, rng):
        n = 50
        e = rng.uniform(size=n) < 0.4
        e[0] = True
        s = rng.standard_normal(n)
        base = top_k_lift(np.ones(n), e, s)
        assert top_k_lift(np.ones(n), e, 2.0 * s + 1.0) == base
        assert top_k_lift(np.ones(n), e, s**3) == base

    def test_validation_errors(self):
        t = np.ones(4)
        with pytest.raises(ValueError, match="fraction"):
            top_k_lift(t, [True] * 4, [1.0, 2.0, 3.0, 4.0], fraction=1.0)
        with pytest.raises(ValueError, match="events"):
            top_k_lift(t, [False] * 4, [1.0, 2.0, 3.0, 4.0], fraction=0.25)


class TestFoldAssignment:
    def test_partition_is_exact_and_balanced(self, rng):
        ds = make_dataset(rng, 103, 3, k=2)
        fold_id = assign_folds(ds, 5, np.random.default_rng(1))
        assert fold_id.shape == (103,)
        counts = np.bincount(fold_id, minlength=5)
        assert counts.sum() == 103
        assert counts.max() - counts.min() <= len(np.unique(fold_id)) + 1

    def test_stratification_spreads_events(self, rng):
        # 20 events among 100 subjects: stratified 5-fold puts exactly 4 per fold
        x = rng.standard_normal((100, 2))
        e = np.zeros(100, dtype=bool)
        e[:20] = True
        ds = SurvivalDataset(x, (OutcomeColumn(np.ones(100), e),),
                             ("a", "b"), ("y",))
        fold_id = assign_folds(ds, 5, np.random.default_rng(3))
        per_fold_events = [e[fold_id == f].sum() for f in range(5)]
        assert per_fold_events == [4] * 5

    def test_hash_is_deterministic_and_content_sensitive(self):
        a = np.array([0, 1, 2, 0, 1], dtype=np.int64)
        assert fold_hash(a) == fold_hash(a.copy())
        assert fold_hash(a) != fold_hash(a[::-1].copy())


class TestTuning:
    def test_single_point_grid_short_circuits(self, rng):
        ds = make_dataset(rng, 40, 3)
        chosen = tune_on_folds("cox", None, ds, [{}], 4,
                               np.random.default_rng(0))
        assert chosen == {}

    def test_rejects_degenerate_penalty(self, rng):
        beta = np.array([1.0, -1.0, 0.5, 0.0])
        x = rng.standard_normal((300, 4))
        t = rng.exponential(1.0, 300) * np.exp(-x @ beta)
        ds = SurvivalDataset(
            x, (OutcomeColumn(t, np.ones(300, dtype=bool)),),
            ("a", "b", "c", "d"), ("y",),
        )
        grid = [{"lam": lam} for lam in (1e-3, 1e6)]
        chosen = tune_on_folds("cox-lasso", None, ds, grid, 4,
                               np.random.default_rng(0))
        assert chosen["lam"] == 1e-3  # lam=1e6 zeroes the model (C-index 0.5)


@pytest.fixture(scope="module")
def small_run():
    rng = np.random.default_rng(42)
    source = make_dataset(rng, 300, 3, k=2)
    target = make_dataset(rng, 120, 3, k=2)
    grids = {"cox": [{}], "cox-ridge": [{"lam": 0.1}, {"lam": 1.0}]}
    plan = CVPlan(outer_folds=3, inner_folds=2, seed=7)
    results = run_nested_cv(source, target, ["cox", "cox-ridge"], grids, plan)
    return results, plan


class TestRunNestedCV:
    def test_shared_fold_hash_across_methods(self, small_run):
        results, plan = small_run
        hashes = {r.fold_hash for r in results}
        assert len(hashes) == 1
        assert len(results) == 2 * plan.outer_folds

    def test_metrics_in_range(self, small_run):
        results, _ = small_run
        for r in results:
            for c in r.per_outcome_cindex:
                assert np.isnan(c) or 0.0 <= c <= 1.0
            for v in r.per_outcome_lift:
                assert np.isnan(v) or v >= 0.0

    def test_single_point_grid_recorded(self, small_run):
        results, _ = small_run
        assert all(r.chosen_hyperparameters == {}
                   for r in results if r.method_name == "cox")

    def test_rerun_is_identical(self, small_run):
        results, plan = small_run
        rng = np.random.default_rng(42)
        source = make_dataset(rng, 300, 3, k=2)
        target = make_dataset(rng, 120, 3, k=2)
        grids = {"cox": [{}], "cox-ridge": [{"lam": 0.1}, {"lam": 1.0}]}
        again = run_nested_cv(source, target, ["cox", "cox-ridge"], grids,
                              plan)
        assert [r.per_outcome_cindex for r in again] == \
            [r.per_outcome_cindex for r in results]
        assert [r.chosen_hyperparameters for r in again] == \
            [r.chosen_hyperparameters for r in results]

    def test_unknown_method_rejected(self, rng):
        ds = make_dataset(rng, 40, 2)
        with pytest.raises(ValueError, match="unknown method"):
            run_nested_cv(None, ds, ["made-up"], {"made-up": [{}]},
                          CVPlan(seed=0))

    def test_empty_grid_rejected(self, rng):
        ds = make_dataset(rng, 40, 2)
        with pytest.raises(ValueError, match="empty"):
            run_nested_cv(None, ds, ["cox"], {"cox": []}, CVPlan(seed=0))

    def test_failures_are_logged_and_skipped(self, rng):
        ds = make_dataset(rng, 60, 2)
        failures = []
        # cox-lasso needs a "lam" key; an empty grid point breaks every fit
        results = run_nested_cv(None, ds, ["cox", "cox-lasso"],
                                {"cox": [{}], "cox-lasso": [{}]},
                                CVPlan(outer_folds=2, inner_folds=2, seed=1),
                                failure_log=failures)
        assert {r.method_name for r in results} == {"cox"}
        assert len(failures) == 2
        assert all(f["method"] == "cox-lasso" for f in failures)

    def test_zero_event_inner_fold_warns(self, caplog, rng):
        x = rng.standard_normal((24, 2))
        e = np.zeros(24, dtype=bool)
        e[0] = True  # a single event cannot reach every inner fold
        ds = SurvivalDataset(x, (OutcomeColumn(np.ones(24), e),),
                             ("a", "b"), ("y",))
        with caplog.at_level(logging.WARNING, logger="corecox.evaluation"):
            tune_on_folds("cox-ridge", None, ds,
                          [{"lam": 0.5}, {"lam": 1.0}], 3,
                          np.random.default_rng(0))
        assert any("usable" in r.message or "failed" in r.message
                   for r in caplog.records)


class TestDefaultGrids:
    def test_covers_all_methods(self):
        grids = default_grids(10, 6)
        assert set(grids) == set(METHOD_NAMES)
        ranks = {g["rank"] for g in grids["core-cox"]}
        assert ranks == {1, 2, 3, 6}
        assert len(grids["cox-lasso"]) == 7

    def test_rank_grid_clipped_to_dimensions(self):
        grids = default_grids(10, 2)
        assert {g["rank"] for g in grids["lr-mtl-target"]} == {1, 2}


class TestBootstrapHazardRatios:
    def test_constant_estimator_gives_zero_width(self, rng):
        ds = make_dataset(rng, 50, 3)
        beta = np.array([0.3, -0.1, 0.0])
        rows = bootstrap_hazard_ratios(lambda d, k: beta, ds, 0, n_boot=100)
        for j, row in enumerate(rows):
            assert row.ci_low == row.hr == row.ci_high == np.exp(beta[j])
            assert row.predictor == ds.predictor_names[j]

    def test_failure_fraction_enforced(self, rng):
        ds = make_dataset(rng, 30, 2)
        calls = {"n": 0}

        def flaky(d, k):
            calls["n"] += 1
            if calls["n"] % 2 == 0:
                raise RuntimeError("boom")
            return np.zeros(2)

        with pytest.raises(RuntimeError, match="replicates failed"):
            bootstrap_hazard_ratios(flaky, ds, 0, n_boot=100)

    def test_argument_validation(self, rng):
        ds = make_dataset(rng, 30, 2)
        with pytest.raises(ValueError, match="n_boot"):
            bootstrap_hazard_ratios(lambda d, k: np.zeros(2), ds, 0, n_boot=50)
        with pytest.raises(ValueError, match="level"):
            bootstrap_hazard_ratios(lambda d, k: np.zeros(2), ds, 0,
                                    n_boot=100, level=1.5)

    def test_null_coverage(self, rng):
        """HR = 1 should land inside ~95% of intervals under no association."""
        from corecox.estimators import fit_cox

        hits = 0
        n_exp = 60
        for i in range(n_exp):
            x = rng.standard_normal((120, 1))
            t = rng.exponential(1.0, 120)
            c = rng.exponential(2.0, 120)
            ds = SurvivalDataset(
                x, (OutcomeColumn(np.minimum(t, c), t <= c),), ("x0",), ("y0",)
            )
            rows = bootstrap_hazard_ratios(
                lambda d, k: fit_cox(d, k)[0], ds, 0, n_boot=100, seed=i
            )
            if rows[0].ci_low <= 1.0 <= rows[0].ci_high:
                hits += 1
        assert 0.85 <= hits / n_exp <= 1.0

    def test_row_invariants(self):
        with pytest.raises(ValueError, match="ci_low <= hr <= ci_high"):
            HazardRatioRow("a", 2.0, 2.5, 3.0, "cox")
        with pytest.raises(ValueError, match="positive"):
            HazardRatioRow("a", 0.5, -0.1, 1.0, "cox")

import logging

import numpy as np
import pytest

from conftest import make_dataset, singleton_structure
from coxflow.groups import SelectionRule
from coxflow.select import (
    adaptive_weights,
    assign_folds,
    concordance,
    cross_validate,
    cv_error,
    lambda_sequence,
    metrics,
    select_lambda,
    solution_path,
    write_cv_summary,
)
from coxflow.simulate import ScenarioSpec, generate_scenario, scenario_structure
from coxflow.solver import FitConfig, fit
from coxflow.survival import SurvivalDataset, build_risk_index, gradient, \
    neg_log_partial_likelihood
from oracles import naive_nlpl


class TestLambdaSequence:
    def test_two_values(self):
        ds = make_dataset(n=30, p=3, seed=1)
        idx = build_risk_index(ds)
        lams = lambda_sequence(idx, singleton_structure(3), 2, 0.5)
        assert len(lams) == 2
        assert lams[1] == pytest.approx(lams[0] / 2)

    def test_singleton_lambda_max_gives_zero_fit(self):
        ds = make_dataset(n=40, p=4, seed=2)
        idx = build_risk_index(ds)
        st_ = singleton_structure(4)
        lams = lambda_sequence(idx, st_, 5, 0.1)
        assert lams[0] == pytest.approx(np.abs(gradient(idx, np.zeros(4))).max())
        res = fit(idx, st_, FitConfig(lam=float(lams[0])))
        assert np.all(res.beta == 0.0)

    def test_log_uniform_decreasing(self):
        ds = make_dataset(n=30, p=3, seed=3)
        idx = build_risk_index(ds)
        lams = lambda_sequence(idx, singleton_structure(3), 12, 0.05)
        assert np.all(np.diff(lams) < 0)
        ratios = lams[1:] / lams[:-1]
        assert np.max(np.abs(ratios - ratios[0])) < 1e-12

    def test_degenerate_gradient_rejected(self):
        n = 10
        X = np.ones((n, 1))
        ds = SurvivalDataset(np.arange(n).astype(object), np.zeros(n),
                             np.arange(1, n + 1, dtype=float),
                             np.ones(n, np.int8), X, ("a",))
        idx = build_risk_index(ds)
        with pytest.raises(ValueError, match="vanishes"):
            lambda_sequence(idx, singleton_structure(1), 5, 0.1)

    def test_input_validation(self):
        ds = make_dataset(n=10, p=2, seed=0)
        idx = build_risk_index(ds)
        with pytest.raises(ValueError):
            lambda_sequence(idx, singleton_structure(2), 1, 0.5)
        with pytest.raises(ValueError):
            lambda_sequence(idx, singleton_structure(2), 5, 1.5)


class TestSolutionPath:
    def test_all_zero_above_lambda_max(self):
        ds = make_dataset(n=30, p=3, seed=4)
        idx = build_risk_index(ds)
        st_ = singleton_structure(3)
        lam_max = lambda_sequence(idx, st_, 2, 0.5)[0]
        path = solution_path(idx, st_, np.array([3 * lam_max, 2 * lam_max]),
                             FitConfig(lam=0.0))
        assert all(np.all(f.beta == 0.0) for f in path.fits)

    def test_single_lambda_equals_direct_fit(self):
        ds = make_dataset(n=40, p=3, seed=5)
        idx = build_risk_index(ds)
        st_ = singleton_structure(3)
        path = solution_path(idx, st_, np.array([0.4]), FitConfig(lam=0.0))
        direct = fit(idx, st_, FitConfig(lam=0.4))
        assert np.allclose(path.fits[0].beta, direct.beta, atol=1e-12)

    def test_warm_start_objective_agreement(self):
        ds = make_dataset(n=60, p=4, seed=6)
        idx = build_risk_index(ds)
        st_ = singleton_structure(4)
        lams = lambda_sequence(idx, st_, 8, 0.05)
        cfg = FitConfig(lam=0.0, tol=1e-8)
        path = solution_path(idx, st_, lams, cfg)
        for lam, f in zip(lams, path.fits):
            cold = fit(idx, st_, FitConfig(lam=float(lam), tol=1e-8))
            assert f.objective == pytest.approx(cold.objective, abs=1e-6)

    def test_rejects_nondecreasing(self):
        ds = make_dataset(n=10, p=2, seed=0)
        idx = build_risk_index(ds)
        with pytest.raises(ValueError, match="decreasing"):
            solution_path(idx, singleton_structure(2), np.array([0.1, 0.2]),
                          FitConfig(lam=0.0))

    def test_nonzero_counts_nondecreasing_on_scenario1(self):
        spec = ScenarioSpec("categorical_s1", n=300, seed=31)
        ds, structure, truth, _ = generate_scenario(spec)
        idx = build_risk_index(ds)
        lams = lambda_sequence(idx, structure, 20, 0.01)
        path = solution_path(idx, structure, lams, FitConfig(lam=0.0))
        counts = path.nonzero_counts()
        raw_monotone = bool(np.all(np.diff(counts) >= 0))
        if not raw_monotone:
            logging.getLogger(__name__).warning(
                "nonzero path not raw-monotone: %s", counts.tolist())
        mono = np.maximum.accumulate(counts)
        assert np.all(np.diff(mono) >= 0)
        assert counts[0] == 0 and counts[-1] >= counts[0]


class TestCvError:
    def test_rejects_zero_events(self):
        ds = make_dataset(n=10, p=2, seed=0)
        idx = build_risk_index(ds)
        with pytest.raises(ValueError, match="no events"):
            cv_error(idx, idx, 0, np.zeros(2))

    def test_zero_beta_closed_form(self):
        full = make_dataset(n=30, p=2, seed=7)
        keep = [s for s in full.subjects() if int(s) % 3 != 0]
        train = full.subset_subjects(keep)
        fi, ti = build_risk_index(full), build_risk_index(train)
        r = int(full.event.sum() - train.event.sum())
        expected = 2 * (
            float(np.sum(fi.tie_counts * np.log([len(s) for s in fi.risk_sets])))
            - float(np.sum(ti.tie_counts * np.log([len(s) for s in ti.risk_sets])))
        ) / r
        assert cv_error(fi, ti, r, np.zeros(2)) == pytest.approx(expected, rel=1e-12)

    def test_matches_naive_evaluator(self):
        full = make_dataset(n=25, p=3, seed=8)
        keep = [s for s in full.subjects() if int(s) % 4 != 0]
        train = full.subset_subjects(keep)
        fi, ti = build_risk_index(full), build_risk_index(train)
        r = int(full.event.sum() - train.event.sum())
        beta = np.array([0.2, -0.3, 0.5])
        expected = 2 * (
            naive_nlpl(full.start, full.stop, full.event, full.X, beta)
            - naive_nlpl(train.start, train.stop, train.event, train.X, beta)
        ) / r
        assert cv_error(fi, ti, r, beta) == pytest.approx(expected, rel=1e-12)


class TestSelectLambda:
    def test_spec_example(self):
        lams = np.array([1.0, 0.5, 0.1])
        means = np.array([2.0, 1.5, 1.4])
        ses = np.array([0.3, 0.25, 0.2])
        i_min, i_1se = select_lambda(lams, means, ses)
        assert lams[i_min] == 0.1
        assert lams[i_1se] == 0.5

    def test_zero_se_collapses_to_min(self):
        lams = np.array([1.0, 0.5, 0.1])
        means = np.array([2.0, 1.5, 1.4])
        i_min, i_1se = select_lambda(lams, means, np.zeros(3))
        assert i_min == i_1se == 2


class TestFolds:
    def test_same_seed_same_assignment(self):
        ds = make_dataset(n=40, p=2, seed=9)
        a = assign_folds(ds, 5, seed=123)
        b = assign_folds(ds, 5, seed=123)
        assert a == b
        c = assign_folds(ds, 5, seed=124)
        assert a != c

    def test_stratified_every_fold_has_events(self):
        ds = make_dataset(n=60, p=2, seed=10, event_prob=0.3)
        fold_of = assign_folds(ds, 6, seed=1)
        ev = ds.events_per_subject()
        counts = np.zeros(6)
        for s, f in fold_of.items():
            counts[f] += ev[s]
        assert np.all(counts >= 1)

    def test_leave_one_out_rejected_without_enough_events(self):
        ds = make_dataset(n=12, p=2, seed=11, event_prob=0.3)
        n_events = int(sum(v > 0 for v in ds.events_per_subject().values()))
        k = len(ds.subjects())
        if n_events < k:
            with pytest.raises(ValueError, match="no events"):
                assign_folds(ds, k, seed=0)

    def test_subjects_stay_together(self):
        ds = make_dataset(n=30, p=2, seed=12)
        fold_of = assign_folds(ds, 4, seed=5)
        assert set(fold_of) == set(ds.subjects())


class TestCrossValidate:
    def setup_method(self):
        self.ds = make_dataset(n=60, p=4, seed=13, event_prob=0.6)
        self.st = singleton_structure(4)
        idx = build_risk_index(self.ds)
        self.lams = lambda_sequence(idx, self.st, 8, 0.05)
        self.cfg = FitConfig(lam=0.0)

    def test_structure_of_result(self):
        cv = cross_validate(self.ds, self.st, self.lams, k=4, seed=2, config=self.cfg)
        assert cv.fold_errors.shape == (4, 8)
        assert cv.lambda_1se >= cv.lambda_min
        assert len(cv.nonzero) == 8

    def test_thread_invariance(self):
        a = cross_validate(self.ds, self.st, self.lams, k=4, seed=2, config=self.cfg,
                           threads=1)
        b = cross_validate(self.ds, self.st, self.lams, k=4, seed=2, config=self.cfg,
                           threads=2)
        assert np.array_equal(a.fold_errors, b.fold_errors)
        assert np.array_equal(a.mean_cve, b.mean_cve)
        assert a.lambda_min == b.lambda_min and a.lambda_1se == b.lambda_1se

    def test_1se_not_larger_support_after_monotonization(self):
        cv = cross_validate(self.ds, self.st, self.lams, k=4, seed=2, config=self.cfg)
        mono = np.maximum.accumulate(cv.nonzero)
        i_min = int(np.argmin(np.abs(cv.lambdas - cv.lambda_min)))
        i_1se = int(np.argmin(np.abs(cv.lambdas - cv.lambda_1se)))
        assert mono[i_1se] <= mono[i_min]

    def test_summary_format(self):
        cv = cross_validate(self.ds, self.st, self.lams, k=4, seed=2, config=self.cfg)
        text = write_cv_summary(cv)
        lines = text.strip().splitlines()
        assert lines[0] == "lambda,mean_cve,se_cve,nonzero,is_min,is_1se"
        assert len(lines) == 9
        assert sum(int(l.split(",")[4]) for l in lines[1:]) == 1
        assert sum(int(l.split(",")[5]) for l in lines[1:]) == 1


class TestAdaptiveWeights:
    def test_zero_fit_floors_weights(self):
        st_ = singleton_structure(3)
        prior = fit(build_risk_index(make_dataset(n=20, p=3, seed=14)), st_,
                    FitConfig(lam=1e9))
        new = adaptive_weights(prior, st_)
        assert np.allclose(new.weights(), 1e16)

    def test_half_magnitude_doubles_weight(self):
        st_ = singleton_structure(2)
        prior = fit(build_risk_index(make_dataset(n=20, p=2, seed=15)), st_,
                    FitConfig(lam=1e9))
        prior.beta = np.array([0.5, 0.25])
        new = adaptive_weights(prior, st_)
        assert new.weights().tolist() == [2.0, 4.0]
        assert [g.members for g in new.groups] == [g.members for g in st_.groups]


class TestMetrics:
    def test_missing_rate(self):
        truth = np.array([1.0, 1.0, 0.0, 0.0])
        rep = metrics({0}, np.zeros(4), truth, [])
        assert rep.mr == 0.5

    def test_false_alarm_rate(self):
        truth = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
        rep = metrics({2}, np.zeros(5), truth, [])
        assert rep.far == pytest.approx(1 / 3)

    def test_perfect_recovery(self):
        truth = np.array([1.0, 0.0])
        rep = metrics({0}, truth.copy(), truth, [])
        assert rep.mse == 0.0 and rep.mr == 0.0 and rep.far == 0.0

    def test_all_selected(self):
        truth = np.array([1.0, 0.0, 0.0])
        rep = metrics({0, 1, 2}, truth, truth, [])
        assert rep.mr == 0.0 and rep.far == 1.0

    def test_undefined_rates_are_none(self):
        rep = metrics(set(), np.zeros(2), np.zeros(2), [])
        assert rep.mr is None and rep.far == 0.0
        rep2 = metrics({0, 1}, np.ones(2), np.ones(2), [])
        assert rep2.far is None

    def test_rules_evaluated(self):
        truth = np.array([1.0, 1.0, 1.0])
        rep = metrics({2}, truth, truth, [SelectionRule("implies", (2,), (0, 1))])
        assert rep.rules == [False]


class TestConcordance:
    def test_perfect_ranking(self):
        n = 10
        x = np.linspace(1, 0, n)[:, None]
        ds = SurvivalDataset(np.arange(n).astype(object), np.zeros(n),
                             np.arange(1, n + 1, dtype=float), np.ones(n, np.int8),
                             x, ("a",))
        idx = build_risk_index(ds)
        assert concordance(idx, np.array([1.0])) == 1.0

    def test_zero_beta_exact_half(self):
        ds = make_dataset(n=30, p=3, seed=16)
        idx = build_risk_index(ds)
        assert concordance(idx, np.zeros(3)) == 0.5

    def test_random_scores_near_half(self):
        vals = []
        for seed in range(100):
            ds = make_dataset(n=25, p=2, seed=seed + 500)
            idx = build_risk_index(ds)
            beta = np.random.default_rng(seed).normal(0, 1, 2)
            vals.append(concordance(idx, beta))
        assert 0.45 < float(np.mean(vals)) < 0.55

    def test_no_comparable_pairs(self):
        ds = SurvivalDataset(np.array([1], object), [0.0], [1.0], [1], [[1.0]], ("a",))
        idx = build_risk_index(ds)
        with pytest.raises(ValueError, match="comparable"):
            concordance(idx, np.zeros(1))

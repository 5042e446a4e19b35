"""Regularization paths, cross-validation, adaptive weights, and metrics."""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, replace

import numpy as np

from .groups import GroupingStructure, SelectionRule, check_rules, selection_support
from .solver import FitConfig, FitResult, fit
from .survival import RiskIndex, SurvivalDataset, build_risk_index, gradient, \
    neg_log_partial_likelihood

_FOLD_STREAM = 0xF01D


@dataclass
class LambdaPath:
    lambdas: np.ndarray
    fits: list[FitResult]

    def nonzero_counts(self) -> np.ndarray:
        return np.array([int(np.count_nonzero(f.beta)) for f in self.fits])

    def beta_at(self, lam: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.lambdas - lam)))
        if not np.isclose(self.lambdas[i], lam, rtol=1e-12, atol=0.0):
            raise KeyError(f"lambda {lam} not on the path")
        return self.fits[i].beta


@dataclass
class CvResult:
    lambdas: np.ndarray
    mean_cve: np.ndarray
    se_cve: np.ndarray
    nonzero: np.ndarray
    lambda_min: float
    lambda_1se: float
    fold_errors: np.ndarray
    path: LambdaPath
    fold_of_subject: dict

    def beta_for_rule(self, rule: str) -> np.ndarray:
        lam = self.lambda_min if rule == "min" else self.lambda_1se
        return self.path.beta_at(lam)


def lambda_sequence(
    index: RiskIndex,
    structure: GroupingStructure,
    n_lambda: int = 30,
    min_ratio: float = 0.01,
) -> np.ndarray:
    """Log-spaced sequence from a zero-fit upper bound downwards.

    lambda_max = max_g ||grad f(0) restricted to g||_1 / w_g is a documented
    heuristic upper bound: at or above it the zero vector admits a feasible
    dual split, so the first fit is exactly zero.  For overlapping groups it
    can be conservative.
    """
    if n_lambda < 2:
        raise ValueError("need at least two lambda values")
    if not 0 < min_ratio < 1:
        raise ValueError("min_ratio must lie in (0, 1)")
    g0 = gradient(index, np.zeros(structure.p))
    a = np.abs(g0)
    lam_max = max(a[list(g.members)].sum() / g.weight for g in structure.groups)
    if lam_max == 0:
        raise ValueError("gradient at zero vanishes; nothing to regularize")
    lams = np.exp(np.linspace(np.log(lam_max), np.log(lam_max * min_ratio), n_lambda))
    lams[0], lams[-1] = lam_max, lam_max * min_ratio
    return lams


def solution_path(
    index: RiskIndex,
    structure: GroupingStructure,
    lambdas: np.ndarray,
    config: FitConfig,
) -> LambdaPath:
    """Fit every lambda in decreasing order, warm-starting from the previous fit."""
    lambdas = np.asarray(lambdas, float)
    if len(lambdas) > 1 and np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambdas must be strictly decreasing")
    fits = []
    warm = None
    for lam in lambdas:
        try:
            res = fit(index, structure, replace(config, lam=float(lam)), warm_start=warm)
        except Exception as e:
            raise RuntimeError(f"fit failed at lambda={lam:.6g}: {e}") from e
        fits.append(res)
        warm = res.beta
    return LambdaPath(lambdas, fits)


def cv_error(
    full_index: RiskIndex,
    train_index: RiskIndex,
    test_events: int,
    beta_hat: np.ndarray,
) -> float:
    """Fold error 2*(P - Q)/R on the deviance scale.

    P and Q are the log partial likelihoods of the training-set estimate on
    the entire data and on the training data; evaluating both through the
    negative log partial likelihood f flips the sign, giving
    2*(f_full - f_train)/R >= 0.  R is the event count of the test fold.
    """
    if test_events < 1:
        raise ValueError("test fold has no events; re-randomize or stratify folds")
    p_term = neg_log_partial_likelihood(full_index, beta_hat)
    q_term = neg_log_partial_likelihood(train_index, beta_hat)
    return 2.0 * (p_term - q_term) / float(test_events)


def assign_folds(dataset: SurvivalDataset, k: int, seed: int, stratify: bool = True) -> dict:
    """Subject-level fold labels, stratified on the event indicator by default."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    subjects = dataset.subjects()
    if k > len(subjects):
        raise ValueError("more folds than subjects")
    events_of = dataset.events_per_subject()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), _FOLD_STREAM)))
    with_event = [s for s in subjects if events_of[s] > 0]
    without = [s for s in subjects if events_of[s] == 0]
    fold_of = {}
    if stratify:
        rng.shuffle(with_event)
        rng.shuffle(without)
        for i, s in enumerate(with_event):
            fold_of[s] = i % k
        off = len(with_event)
        for j, s in enumerate(without):
            fold_of[s] = (off + j) % k
    else:
        rng.shuffle(subjects)
        for i, s in enumerate(subjects):
            fold_of[s] = i % k
    counts = np.zeros(k, int)
    for s, f in fold_of.items():
        counts[f] += events_of[s]
    if np.any(counts == 0):
        bad = int(np.argmax(counts == 0))
        raise ValueError(f"fold {bad} has no events (total events {sum(counts)} < folds?)")
    return fold_of


def _cv_fold(args):
    dataset, structure, lambdas, config, fold_of, fold_id = args
    test = {s for s, f in fold_of.items() if f == fold_id}
    train_ds = dataset.subset_subjects(set(fold_of) - test)
    train_index = build_risk_index(train_ds)
    full_index = build_risk_index(dataset)
    test_events = int(sum(dataset.events_per_subject()[s] for s in test))
    path = solution_path(train_index, structure, lambdas, config)
    return np.array([
        cv_error(full_index, train_index, test_events, f.beta) for f in path.fits
    ])


def _parallel_map(fn, items, threads):
    if threads is None:
        threads = 1
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=min(threads, len(items))) as pool:
        return pool.map(fn, items)


def select_lambda(lambdas, mean_cve, se_cve) -> tuple[int, int]:
    """Indices of the min rule and the one-standard-error rule.

    min: lowest mean error (largest lambda on ties).  1se: largest lambda
    whose mean error is within one standard error of the minimum.
    """
    lambdas = np.asarray(lambdas, float)
    mean_cve = np.asarray(mean_cve, float)
    i_min = int(np.argmin(mean_cve))
    threshold = mean_cve[i_min] + se_cve[i_min]
    i_1se = int(np.nonzero(mean_cve <= threshold)[0].min())
    return i_min, i_1se


def cross_validate(
    dataset: SurvivalDataset,
    structure: GroupingStructure,
    lambdas: np.ndarray,
    k: int,
    seed: int,
    config: FitConfig,
    threads: int = 1,
    stratify: bool = True,
) -> CvResult:
    """K-fold cross-validation over a fixed lambda sequence.

    Folds are split by subject so all records of a subject stay together.
    Also fits the full-data solution path, from which the per-lambda support
    sizes and the refit coefficients at the selected lambdas are taken.
    """
    lambdas = np.asarray(lambdas, float)
    fold_of = assign_folds(dataset, k, seed, stratify=stratify)
    tasks = [(dataset, structure, lambdas, config, fold_of, f) for f in range(k)]
    fold_errors = np.vstack(_parallel_map(_cv_fold, tasks, threads))
    mean_cve = fold_errors.mean(axis=0)
    se_cve = fold_errors.std(axis=0, ddof=1) / np.sqrt(k)
    full_index = build_risk_index(dataset)
    path = solution_path(full_index, structure, lambdas, config)
    nonzero = path.nonzero_counts()
    i_min, i_1se = select_lambda(lambdas, mean_cve, se_cve)
    return CvResult(lambdas, mean_cve, se_cve, nonzero, float(lambdas[i_min]),
                    float(lambdas[i_1se]), fold_errors, path, fold_of)


def write_cv_summary(cv: CvResult) -> str:
    """Delimited summary: lambda,mean_cve,se_cve,nonzero,is_min,is_1se."""
    lines = ["lambda,mean_cve,se_cve,nonzero,is_min,is_1se"]
    for i, lam in enumerate(cv.lambdas):
        lines.append(
            f"{float(lam)!r},{float(cv.mean_cve[i])!r},{float(cv.se_cve[i])!r},{int(cv.nonzero[i])},"
            f"{int(lam == cv.lambda_min)},{int(lam == cv.lambda_1se)}"
        )
    return "\n".join(lines) + "\n"


def adaptive_weights(prior_fit: FitResult, structure: GroupingStructure) -> GroupingStructure:
    """Debiasing reweight: w_g = 1 / max(max_{j in g} |beta_hat_j|, 1e-16)."""
    b = np.abs(np.asarray(prior_fit.beta, float))
    new_w = [1.0 / max(float(b[list(g.members)].max()), 1e-16) for g in structure.groups]
    return structure.reweighted(new_w)


def concordance(index: RiskIndex, beta_hat: np.ndarray) -> float:
    """Risk-set concordance for time-dependent covariates.

    Over all pairs (event i at t_l, j in R_l minus D_l), the fraction with a
    larger linear predictor for the failing record, ties counted 1/2.
    """
    eta = index.X @ np.asarray(beta_hat, float)
    num = 0.0
    den = 0
    eo, ro = index.event_offsets, index.risk_offsets
    for l in range(index.n_event_times):
        d_set = index.flat_event[eo[l]:eo[l + 1]]
        r_set = index.flat_risk[ro[l]:ro[l + 1]]
        others = np.setdiff1d(r_set, d_set, assume_unique=True)
        if len(others) == 0:
            continue
        srt = np.sort(eta[others])
        for e_i in eta[d_set]:
            lo = np.searchsorted(srt, e_i, side="left")
            hi = np.searchsorted(srt, e_i, side="right")
            num += lo + 0.5 * (hi - lo)
        den += len(d_set) * len(others)
    if den == 0:
        raise ValueError("no comparable pairs for the concordance index")
    return num / den


@dataclass
class MetricReport:
    mr: float | None
    far: float | None
    mse: float
    rules: list[bool]
    rci: float | None = None

    def rules_all_ok(self) -> bool:
        return all(self.rules)


def metrics(
    selected,
    beta_hat: np.ndarray,
    truth_beta: np.ndarray,
    rules: list[SelectionRule],
    index: RiskIndex = None,
) -> MetricReport:
    """Table-style selection metrics against a known truth.

    MR: fraction of true predictors missed.  FAR: fraction of noise
    variables selected.  MSE: ||beta_hat - truth||^2 / p.  Rule booleans
    come from :func:`check_rules`; either rate is None when its denominator
    is empty.
    """
    beta_hat = np.asarray(beta_hat, float)
    truth_beta = np.asarray(truth_beta, float)
    sel = set(int(j) for j in selected)
    true_set = set(np.nonzero(truth_beta != 0)[0].tolist())
    noise = set(range(len(truth_beta))) - true_set
    mr = len(true_set - sel) / len(true_set) if true_set else None
    far = len(sel & noise) / len(noise) if noise else None
    mse = float(np.sum((beta_hat - truth_beta) ** 2)) / len(truth_beta)
    rule_ok = check_rules(sel, rules)
    rci = concordance(index, beta_hat) if index is not None else None
    return MetricReport(mr, far, mse, rule_ok, rci)

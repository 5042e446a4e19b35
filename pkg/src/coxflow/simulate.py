"""Synthetic scenario generators and the desk-scale experiment harness.

Three scenario families:

* ``categorical_s1`` / ``categorical_s2`` — two 3-level categorical
  variables and one continuous variable changing piecewise-constantly over a
  50-point grid, with interaction columns (9 covariates total).
* ``interactions`` — ``p_main`` standard-normal main terms over a short
  grid plus all pairwise interactions under a strong-heredity grouping.
* ``sparse_group_1|2|3`` — 200 time-fixed Gaussian covariates in 10 blocks
  of 20 with a sparse-group structure and block-patterned truth.

Event times come from a piecewise-exponential hazard
h0 * exp(x(t)' beta) via inverse-transform sampling; h0 and the uniform
censoring horizon are calibrated once per scenario by bisection on
10^4-draw Monte Carlo estimates and then frozen.  All randomness is derived
from one master seed through labeled substreams, so adding replications
never perturbs earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .groups import (
    Group,
    GroupingStructure,
    SelectionRule,
    build_sparse_group,
    build_strong_heredity,
    strong_heredity_rules,
)
from .select import _parallel_map, concordance, cross_validate, lambda_sequence, metrics, \
    selection_support
from .solver import FitConfig
from .survival import SurvivalDataset, build_risk_index

SCENARIOS = (
    "categorical_s1",
    "categorical_s2",
    "interactions",
    "sparse_group_1",
    "sparse_group_2",
    "sparse_group_3",
)

# substream labels
_COV, _EVT, _CAL = 0xC0, 0xE7, 0xCA


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    n: int
    seed: int
    p_main: int = 20
    censoring: float = 0.5

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.kind!r}; choose from {SCENARIOS}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.seed is None:
            raise ValueError("a seed is mandatory for reproducible simulation")
        if not 0 < self.censoring < 1:
            raise ValueError("target censoring fraction must lie in (0, 1)")


@dataclass(frozen=True)
class Truth:
    beta: np.ndarray
    true_set: tuple[int, ...]
    noise_set: tuple[int, ...]
    rules: tuple[SelectionRule, ...]


def _rng(*labels) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=tuple(int(x) for x in labels)))


def scenario_horizon(kind: str) -> float:
    return 50.0 if kind.startswith("categorical") else 10.0


def _piecewise_series(rng, horizon: int, dur_low: int, dur_high: int, categorical: bool):
    """Value segments (change_times, values) covering a horizon of grid points."""
    times, values = [0], []
    total = 0
    while total < horizon:
        v = rng.integers(1, 4) if categorical else rng.standard_normal()
        d = int(rng.integers(dur_low, dur_high + 1))
        values.append(float(v))
        total += d
        times.append(min(total, horizon))
    return np.array(times[:-1], float), np.array(values)


def _merge_paths(series: list[tuple[np.ndarray, np.ndarray]], horizon: float):
    """Merge per-variable step functions into common knots and a value matrix."""
    knots = np.unique(np.concatenate([t for t, _ in series]))
    cols = []
    for t, v in series:
        idx = np.searchsorted(t, knots, side="right") - 1
        cols.append(v[idx])
    return knots, np.column_stack(cols)


def _categorical_design(raw: np.ndarray) -> np.ndarray:
    """Columns A1,A2,B,A1B,A2B,C1,C2,C1B,C2B from raw (A, B, C) values."""
    A, B, C = raw[:, 0], raw[:, 1], raw[:, 2]
    a1, a2 = (A == 2).astype(float), (A == 3).astype(float)
    c1, c2 = (C == 2).astype(float), (C == 3).astype(float)
    return np.column_stack([a1, a2, B, a1 * B, a2 * B, c1, c2, c1 * B, c2 * B])


CATEGORICAL_NAMES = ("A1", "A2", "B", "A1B", "A2B", "C1", "C2", "C1B", "C2B")


def _interaction_design(raw: np.ndarray, p_main: int) -> np.ndarray:
    cols = [raw]
    pairs = [(a, b) for a in range(p_main) for b in range(a + 1, p_main)]
    inter = np.column_stack([raw[:, a] * raw[:, b] for a, b in pairs]) if pairs else \
        np.empty((len(raw), 0))
    return np.column_stack([raw, inter])


def _subject_paths(spec: ScenarioSpec, n: int, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-subject (knots, X rows at knots) pairs on [0, horizon)."""
    out = []
    horizon = int(scenario_horizon(spec.kind))
    for _ in range(n):
        if spec.kind.startswith("categorical"):
            series = [
                _piecewise_series(rng, horizon, 5, 10, categorical=True),   # A
                _piecewise_series(rng, horizon, 5, 10, categorical=False),  # B
                _piecewise_series(rng, horizon, 5, 10, categorical=True),   # C
            ]
            knots, raw = _merge_paths(series, horizon)
            out.append((knots, _categorical_design(raw)))
        elif spec.kind == "interactions":
            series = [
                _piecewise_series(rng, horizon, 2, 3, categorical=False)
                for _ in range(spec.p_main)
            ]
            knots, raw = _merge_paths(series, horizon)
            out.append((knots, _interaction_design(raw, spec.p_main)))
        else:
            x = rng.standard_normal(200)
            out.append((np.zeros(1), x[None, :]))
    return out


def scenario_names(spec: ScenarioSpec) -> tuple[str, ...]:
    if spec.kind.startswith("categorical"):
        return CATEGORICAL_NAMES
    if spec.kind == "interactions":
        return tuple(build_strong_heredity(spec.p_main).variables)
    return tuple(f"X{j + 1}" for j in range(200))


def gen_piecewise_covariates(n: int, spec: ScenarioSpec, rng=None) -> SurvivalDataset:
    """Covariate-only dataset: per-subject interval records spanning the horizon."""
    rng = rng if rng is not None else _rng(spec.seed, _COV)
    paths = _subject_paths(spec, n, rng)
    horizon = scenario_horizon(spec.kind)
    names = scenario_names(spec)
    ids, starts, stops, xs = [], [], [], []
    for sid, (knots, rows) in enumerate(paths):
        ends = np.append(knots[1:], horizon)
        for a, b, x in zip(knots, ends, rows):
            ids.append(sid)
            starts.append(a)
            stops.append(b)
            xs.append(x)
    return SurvivalDataset(np.array(ids, object), np.array(starts), np.array(stops),
                           np.zeros(len(ids), np.int8), np.array(xs), names)


def _paths_from_dataset(ds: SurvivalDataset):
    order = {}
    for i, s in enumerate(ds.subject_ids):
        order.setdefault(s, []).append(i)
    paths = []
    for s, idx in order.items():
        idx.sort(key=lambda i: ds.start[i])
        paths.append((s, ds.start[idx], ds.X[idx]))
    return paths


def _cum_hazard_inverse(knots, rates, target):
    """First time t with integral of the step rates over [0, t] equal to target.

    The last rate extends beyond the final knot indefinitely.
    """
    t = 0.0
    acc = 0.0
    for k in range(len(knots)):
        seg_end = knots[k + 1] if k + 1 < len(knots) else np.inf
        width = seg_end - knots[k]
        seg = rates[k] * width
        if acc + seg >= target or not np.isfinite(width):
            return knots[k] + (target - acc) / rates[k]
        acc += seg
    return np.inf


def gen_event_times(
    covariates: SurvivalDataset,
    beta_true: np.ndarray,
    target_censoring: float,
    baseline_hazard: float,
    censor_max: float,
    rng,
    horizon: float,
) -> SurvivalDataset:
    """Attach piecewise-exponential event times to covariate paths.

    Each subject's event time solves H(T) = E with E ~ Exp(1) and hazard
    h0*exp(x(t)'beta); censoring is min(U(0, censor_max), horizon).  Records
    are truncated at the observed time and the terminal record carries the
    event flag.
    """
    beta_true = np.asarray(beta_true, float)
    ids, starts, stops, events, xs = [], [], [], [], []
    n_event = 0
    for sid, knots, rows in _paths_from_dataset(covariates):
        e_draw = rng.exponential()
        u_draw = rng.uniform(0.0, censor_max)
        rates = baseline_hazard * np.exp(rows @ beta_true)
        t_event = _cum_hazard_inverse(knots, rates, e_draw)
        t_cens = min(u_draw, horizon)
        observed = min(t_event, t_cens)
        died = t_event <= t_cens
        if observed <= 0.0:
            observed, died = min(1e-9, horizon / 1e6), False
        n_event += int(died)
        ends = np.append(knots[1:], np.inf)
        for k in range(len(knots)):
            if knots[k] >= observed:
                break
            seg_end = min(ends[k], observed)
            ids.append(sid)
            starts.append(knots[k])
            stops.append(seg_end)
            events.append(int(died and seg_end == observed))
            xs.append(rows[k])
    if n_event == 0:
        raise ValueError("generated dataset has no events; lower the censoring target")
    return SurvivalDataset(np.array(ids, object), np.array(starts), np.array(stops),
                           np.array(events, np.int8), np.array(xs),
                           covariates.covariate_names)


def scenario_structure(spec: ScenarioSpec) -> GroupingStructure:
    if spec.kind.startswith("categorical"):
        g = [
            Group("gA", (0, 1, 3, 4)),          # {A1, A2, A1B, A2B}
            Group("gB", (2, 3, 4, 7, 8)),       # {B, A1B, A2B, C1B, C2B}
            Group("gAB", (3, 4)),               # {A1B, A2B}
            Group("gC", (5, 6, 7, 8)),          # {C1, C2, C1B, C2B}
            Group("gCB", (7, 8)),               # {C1B, C2B}
        ]
        return GroupingStructure(tuple(g), 9, CATEGORICAL_NAMES)
    if spec.kind == "interactions":
        return build_strong_heredity(spec.p_main)
    blocks = [list(range(20 * b, 20 * (b + 1))) for b in range(10)]
    return build_sparse_group(blocks, within_weight=0.5, block_weight_scale=0.5)


def scenario_truth(spec: ScenarioSpec) -> Truth:
    if spec.kind.startswith("categorical"):
        beta = np.zeros(9)
        rules = (
            SelectionRule("implies", (3, 4), (0, 1, 2)),
            SelectionRule("implies", (7, 8), (5, 6, 2)),
            SelectionRule("collective", (0, 1)),
            SelectionRule("collective", (5, 6)),
            SelectionRule("collective", (3, 4)),
            SelectionRule("collective", (7, 8)),
        )
        if spec.kind == "categorical_s1":
            beta[[0, 1]] = np.log(3.0)
        else:
            beta[[0, 1, 2, 3, 4]] = np.log(3.0)
    elif spec.kind == "interactions":
        p_main = spec.p_main
        if p_main < 9:
            raise ValueError("interactions scenario needs at least 9 main terms")
        pairs = [(a, b) for a in range(p_main) for b in range(a + 1, p_main)]
        pair_pos = {pr: p_main + k for k, pr in enumerate(pairs)}
        beta = np.zeros(p_main + len(pairs))
        beta[:9] = 0.4
        active_pairs = [(0, 1), (0, 2), (0, 6), (0, 7), (0, 8), (3, 4), (3, 5), (6, 7), (6, 8)]
        for pr in active_pairs:
            beta[pair_pos[pr]] = 0.3
        rules = tuple(strong_heredity_rules(p_main))
    else:
        case = int(spec.kind[-1])
        beta_s = np.concatenate([[0.1, 0.2, 0.3, 0.4, 0.5], np.zeros(15)])
        beta = np.zeros(200)
        for b in range(case):
            beta[20 * b:20 * (b + 1)] = beta_s
        rules = ()
    true_set = tuple(int(j) for j in np.nonzero(beta != 0)[0])
    noise_set = tuple(int(j) for j in np.nonzero(beta == 0)[0])
    return Truth(beta, true_set, noise_set, rules)


@lru_cache(maxsize=None)
def _scenario_calibration(kind: str, p_main: int, censoring: float) -> tuple[float, float]:
    """Frozen (h0, censor_max) targeting a median event time at half the
    horizon and the requested censoring fraction; bisection on 10^4 draws."""
    spec = ScenarioSpec(kind, n=1, seed=0, p_main=p_main, censoring=censoring)
    truth = scenario_truth(spec)
    horizon = scenario_horizon(kind)
    target_median = horizon / 2.0
    rng = _rng(_CAL, SCENARIOS.index(kind), p_main)
    n_draw = 10000
    paths = _subject_paths(spec, n_draw, rng)
    e_draws = rng.exponential(size=n_draw)
    u_draws = rng.uniform(size=n_draw)

    def event_times(h0):
        ts = np.empty(n_draw)
        for i, (knots, rows) in enumerate(paths):
            rates = h0 * np.exp(rows @ truth.beta)
            ts[i] = _cum_hazard_inverse(knots, rates, e_draws[i])
        return ts

    lo, hi = 1e-8, 1e3
    for _ in range(60):
        mid = np.sqrt(lo * hi)
        if np.median(event_times(mid)) > target_median:
            lo = mid
        else:
            hi = mid
    h0 = np.sqrt(lo * hi)

    t_ev = event_times(h0)
    floor_frac = np.mean(np.minimum(u_draws * 1e9, horizon) < t_ev)
    if censoring < floor_frac - 0.02:
        raise ValueError(
            f"censoring target {censoring} below the administrative floor {floor_frac:.3f}"
        )

    lo, hi = 1e-6 * horizon, 1e9
    for _ in range(60):
        mid = np.sqrt(lo * hi)
        frac = np.mean(np.minimum(u_draws * mid, horizon) < t_ev)
        if frac > censoring:
            lo = mid
        else:
            hi = mid
    return float(h0), float(np.sqrt(lo * hi))


def generate_scenario(spec: ScenarioSpec, replication: int = 0):
    """One seeded dataset with its structure and truth.

    Returns (dataset, structure, truth, meta); meta records the frozen
    calibration constants.
    """
    truth = scenario_truth(spec)
    structure = scenario_structure(spec)
    h0, censor_max = _scenario_calibration(spec.kind, spec.p_main, spec.censoring)
    cov = gen_piecewise_covariates(spec.n, spec, rng=_rng(spec.seed, replication, _COV))
    ds = gen_event_times(cov, truth.beta, spec.censoring, h0, censor_max,
                         _rng(spec.seed, replication, _EVT), scenario_horizon(spec.kind))
    meta = {
        "kind": spec.kind, "n": spec.n, "seed": spec.seed, "replication": replication,
        "p_main": spec.p_main, "baseline_hazard": h0, "censor_max": censor_max,
        "target_censoring": spec.censoring,
    }
    return ds, structure, truth, meta


@dataclass
class ExperimentResult:
    spec: ScenarioSpec
    rows: list[dict]
    meta: dict

    def mean_rows(self) -> list[dict]:
        out = []
        for rule in sorted({r["rule"] for r in self.rows}):
            sub = [r for r in self.rows if r["rule"] == rule]
            agg = {"replication": "mean", "rule": rule}
            for key in ("nonzero", "mr", "far", "r1s", "r2s", "rci", "mse", "cve"):
                vals = [r[key] for r in sub if r[key] is not None]
                agg[key] = float(np.mean(vals)) if vals else None
            agg["lambda"] = None
            out.append(agg)
        return out

    def to_csv(self) -> str:
        cols = ["replication", "rule", "lambda", "nonzero", "mr", "far", "r1s", "r2s",
                "rci", "mse", "cve"]
        lines = [",".join(cols)]
        for r in self.rows + self.mean_rows():
            vals = []
            for c in cols:
                v = r.get(c)
                if v is None:
                    vals.append("")
                elif isinstance(v, float):
                    vals.append(repr(float(v)))
                else:
                    vals.append(str(v))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def _run_replication(args):
    spec, rep, config, folds, n_lambda, min_ratio, rules = args
    ds, structure, truth, meta = generate_scenario(spec, replication=rep)
    index = build_risk_index(ds)
    lams = lambda_sequence(index, structure, n_lambda, min_ratio)
    cv = cross_validate(ds, structure, lams, k=folds,
                        seed=int(_rng(spec.seed, rep, 0xF0).integers(2 ** 31)),
                        config=config, threads=1)
    rows = []
    for rule in rules:
        lam = cv.lambda_min if rule == "min" else cv.lambda_1se
        beta_hat = cv.path.beta_at(lam)
        sel = selection_support(beta_hat, tol=0.0)
        rep_metrics = metrics(sel, beta_hat, truth.beta, list(truth.rules))
        rci = concordance(index, beta_hat)
        i_lam = int(np.argmin(np.abs(cv.lambdas - lam)))
        implies_ok = [ok for ok, r in zip(rep_metrics.rules, truth.rules)
                      if r.kind == "implies"]
        collective_ok = [ok for ok, r in zip(rep_metrics.rules, truth.rules)
                         if r.kind == "collective"]
        rows.append({
            "replication": rep, "rule": rule, "lambda": float(lam),
            "nonzero": int(len(sel)),
            "mr": rep_metrics.mr, "far": rep_metrics.far,
            "r1s": float(all(implies_ok)) if implies_ok else None,
            "r2s": float(all(collective_ok)) if collective_ok else None,
            "rci": rci, "mse": rep_metrics.mse,
            "cve": float(cv.mean_cve[i_lam]),
        })
    return rows, meta


def run_experiment(
    spec: ScenarioSpec,
    replications: int,
    config: FitConfig = None,
    folds: int = 10,
    n_lambda: int = 30,
    min_ratio: float = 0.01,
    rules: tuple[str, ...] = ("min", "1se"),
    threads: int = 1,
) -> ExperimentResult:
    """Replicate the scenario end to end and tabulate selection metrics.

    Per replication: generate data, run ``folds``-fold CV over a shared
    lambda sequence, then report MR/FAR/rule-satisfaction/RCI/MSE/CV-E for
    each selection rule.  Replications run on independent derived streams
    (optionally in parallel); row order is fixed by replication index, so
    results are deterministic given the spec seed.
    """
    if replications < 1:
        raise ValueError("need at least one replication")
    config = config or FitConfig(lam=0.0)
    # freeze the calibration in the parent so forked workers share it
    _scenario_calibration(spec.kind, spec.p_main, spec.censoring)
    tasks = [(spec, rep, config, folds, n_lambda, min_ratio, rules)
             for rep in range(replications)]
    try:
        results = _parallel_map(_run_replication, tasks, threads)
    except Exception as e:
        raise RuntimeError(f"experiment failed: {e}") from e
    rows = [row for rep_rows, _ in results for row in rep_rows]
    return ExperimentResult(spec, rows, results[0][1])

"""Counting-process survival data and the Breslow partial likelihood.

Data are held in long (counting-process) format: each row is an interval
[start, stop) on which the covariate vector of one subject is constant,
with ``event`` marking a failure at ``stop``.  Risk-set membership uses the
half-open convention ``start < t <= stop``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numba import njit


class DataError(ValueError):
    """Raised when a dataset violates the counting-process contract."""


class LikelihoodOverflowError(FloatingPointError):
    """Raised when the partial likelihood is non-finite despite stabilization."""


class CountingRecord(NamedTuple):
    subject_id: object
    start: float
    stop: float
    event: int
    covariates: np.ndarray


@dataclass(frozen=True)
class SurvivalDataset:
    """Immutable long-format survival data.

    Attributes
    ----------
    subject_ids : object array, one entry per record
    start, stop : float arrays; start < stop per record
    event : int8 array in {0, 1}; 1 marks a failure at ``stop``
    X : (n_records, p) float matrix of interval-constant covariates
    covariate_names : p column labels
    """

    subject_ids: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    event: np.ndarray
    X: np.ndarray
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "subject_ids", np.asarray(self.subject_ids, dtype=object))
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "stop", np.asarray(self.stop, dtype=float))
        object.__setattr__(self, "event", np.asarray(self.event, dtype=np.int8))
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        if X.ndim != 2:
            raise DataError("covariate matrix must be 2-dimensional")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "covariate_names", tuple(str(c) for c in self.covariate_names))
        for arr in (self.start, self.stop, self.event, self.subject_ids):
            if arr.shape[0] != X.shape[0]:
                raise DataError("all record columns must have the same length")
        if len(self.covariate_names) != X.shape[1]:
            raise DataError(
                f"{len(self.covariate_names)} covariate names for {X.shape[1]} columns"
            )

    @property
    def n_records(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def records(self) -> list[CountingRecord]:
        return [
            CountingRecord(self.subject_ids[i], float(self.start[i]), float(self.stop[i]),
                           int(self.event[i]), self.X[i])
            for i in range(self.n_records)
        ]

    def subjects(self) -> list:
        """Unique subject ids in first-appearance order."""
        seen: dict = {}
        for s in self.subject_ids:
            seen.setdefault(s, None)
        return list(seen)

    def subset_subjects(self, keep: Iterable) -> "SurvivalDataset":
        keep_set = set(keep)
        mask = np.fromiter((s in keep_set for s in self.subject_ids), bool, self.n_records)
        return SurvivalDataset(self.subject_ids[mask], self.start[mask], self.stop[mask],
                               self.event[mask], self.X[mask], self.covariate_names)

    def validate(self) -> None:
        """Raise :class:`DataError` on the first contract violation found."""
        if self.n_records == 0:
            raise DataError("empty dataset")
        if not np.all(np.isfinite(self.start)) or not np.all(np.isfinite(self.stop)):
            raise DataError("non-finite interval boundaries")
        if not np.all(np.isfinite(self.X)):
            raise DataError("non-finite covariate values")
        if np.any(self.start >= self.stop):
            i = int(np.argmax(self.start >= self.stop))
            raise DataError(f"record {i}: start {self.start[i]} >= stop {self.stop[i]}")
        if not np.all((self.event == 0) | (self.event == 1)):
            raise DataError("event indicator must be 0 or 1")
        if not np.any(self.event == 1):
            raise DataError("dataset contains no events")
        by_subject: dict = {}
        for i, s in enumerate(self.subject_ids):
            by_subject.setdefault(s, []).append(i)
        for s, idx in by_subject.items():
            idx.sort(key=lambda i: self.start[i])
            n_ev = sum(int(self.event[i]) for i in idx)
            if n_ev > 1:
                raise DataError(f"subject {s!r} has {n_ev} event records")
            for a, b in zip(idx, idx[1:]):
                if self.stop[a] > self.start[b]:
                    raise DataError(f"subject {s!r} has overlapping intervals")
                if self.event[a]:
                    raise DataError(f"subject {s!r} has an event record before its last interval")

    def events_per_subject(self) -> dict:
        out: dict = {}
        for i, s in enumerate(self.subject_ids):
            out[s] = out.get(s, 0) + int(self.event[i])
        return out


def from_records(records: Sequence[CountingRecord], covariate_names: Sequence[str]) -> SurvivalDataset:
    X = np.array([np.asarray(r.covariates, dtype=float) for r in records])
    return SurvivalDataset(
        np.array([r.subject_id for r in records], dtype=object),
        np.array([r.start for r in records], dtype=float),
        np.array([r.stop for r in records], dtype=float),
        np.array([r.event for r in records], dtype=np.int8),
        X,
        tuple(covariate_names),
    )


@dataclass(frozen=True)
class RiskIndex:
    """Precomputed event-time index sets for likelihood evaluation.

    ``flat_risk``/``risk_offsets`` and ``flat_event``/``event_offsets`` store
    the per-event-time record index sets D_l and R_l in concatenated form,
    sorted ascending within each set.  ``event_times`` is strictly increasing.
    """

    event_times: np.ndarray
    tie_counts: np.ndarray
    flat_event: np.ndarray
    event_offsets: np.ndarray
    flat_risk: np.ndarray
    risk_offsets: np.ndarray
    X: np.ndarray
    event_x_sum: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.event_x_sum is None:
            s = self.X[self.flat_event].sum(axis=0)
            object.__setattr__(self, "event_x_sum", s)

    @property
    def n_event_times(self) -> int:
        return len(self.event_times)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.tie_counts.sum())

    @property
    def event_sets(self) -> list[np.ndarray]:
        return np.split(self.flat_event, self.event_offsets[1:-1])

    @property
    def risk_sets(self) -> list[np.ndarray]:
        return np.split(self.flat_risk, self.risk_offsets[1:-1])

    @property
    def covariate_rows_at_event(self) -> list[np.ndarray]:
        return [self.X[r] for r in self.risk_sets]


def build_risk_index(dataset: SurvivalDataset) -> RiskIndex:
    """Build the event-time index sets D_l, R_l with d_l tie counts.

    Membership in R_l is ``start < t_l <= stop``.  Ordering is deterministic:
    event times ascending, record indices ascending within every set.
    """
    dataset.validate()
    ev_mask = dataset.event == 1
    event_times = np.unique(dataset.stop[ev_mask])
    L = len(event_times)

    stop_of_events = dataset.stop[ev_mask]
    ev_records = np.nonzero(ev_mask)[0]
    order = np.lexsort((ev_records, stop_of_events))
    flat_event = ev_records[order]
    tie_counts = np.bincount(np.searchsorted(event_times, stop_of_events), minlength=L)
    event_offsets = np.concatenate([[0], np.cumsum(tie_counts)])

    # record i is at risk for event times t with start_i < t <= stop_i
    lo = np.searchsorted(event_times, dataset.start, side="right")
    hi = np.searchsorted(event_times, dataset.stop, side="right")
    lengths = hi - lo
    total = int(lengths.sum())
    rec_rep = np.repeat(np.arange(dataset.n_records), lengths)
    seg_start = np.cumsum(lengths) - lengths
    ell = np.arange(total) - np.repeat(seg_start, lengths) + np.repeat(lo, lengths)
    order = np.lexsort((rec_rep, ell))
    flat_risk = rec_rep[order]
    risk_counts = np.bincount(ell, minlength=L)
    risk_offsets = np.concatenate([[0], np.cumsum(risk_counts)])

    if np.any(risk_counts < tie_counts):
        raise DataError("risk set smaller than its event set; inconsistent intervals")

    return RiskIndex(event_times, tie_counts.astype(np.int64), flat_event,
                     event_offsets, flat_risk, risk_offsets, dataset.X)


@njit(cache=True, nogil=True)
def _segment_sums(w, flat, off):
    L = off.shape[0] - 1
    out = np.empty(L)
    for l in range(L):
        s = 0.0
        for i in range(off[l], off[l + 1]):
            s += w[flat[i]]
        out[l] = s
    return out


@njit(cache=True, nogil=True)
def _segment_logsumexp(eta, flat, off):
    """Per-segment log-sum-exp with the segment's own maximum subtracted."""
    L = off.shape[0] - 1
    out = np.empty(L)
    for l in range(L):
        m = -np.inf
        for i in range(off[l], off[l + 1]):
            v = eta[flat[i]]
            if v > m:
                m = v
        s = 0.0
        for i in range(off[l], off[l + 1]):
            s += np.exp(eta[flat[i]] - m)
        out[l] = m + np.log(s)
    return out


@njit(cache=True, nogil=True)
def _scatter_softmax(w, flat, off, coef, c):
    for l in range(off.shape[0] - 1):
        a = coef[l]
        for i in range(off[l], off[l + 1]):
            r = flat[i]
            c[r] += w[r] * a


@njit(cache=True, nogil=True)
def _scatter_softmax_exact(eta, flat, off, d, log_s, c):
    for l in range(off.shape[0] - 1):
        for i in range(off[l], off[l + 1]):
            r = flat[i]
            c[r] += d[l] * np.exp(eta[r] - log_s[l])


def _risk_terms(index: RiskIndex, beta: np.ndarray):
    """(eta, per-record exp(eta - shift), per-event-time log risk sums).

    Risk sums are stabilized by subtracting the running maximum of eta; the
    shift cancels exactly in the softmax weights, and segments that still
    underflow fall back to their own per-risk-set maximum.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (index.p,):
        raise DataError(f"beta has length {beta.shape}, expected ({index.p},)")
    eta = index.X @ beta
    shift = float(eta.max())
    if not np.isfinite(shift):
        raise LikelihoodOverflowError("non-finite linear predictor")
    w = np.exp(eta - shift)
    sums = _segment_sums(w, index.flat_risk, index.risk_offsets)
    exact = bool(np.any(sums <= 0.0) or not np.all(np.isfinite(sums)))
    if exact:
        log_s = _segment_logsumexp(eta, index.flat_risk, index.risk_offsets)
    else:
        log_s = shift + np.log(sums)
    return eta, w, sums, log_s, exact


def neg_log_partial_likelihood(index: RiskIndex, beta: np.ndarray) -> float:
    """Breslow-approximated negative log partial likelihood.

    f(beta) = sum_l [ d_l * log sum_{i in R_l} exp(x_i' beta) ]
              - (sum_l sum_{i in D_l} x_i)' beta,
    evaluated with log-sum-exp stabilization per risk set.
    """
    _, _, _, log_s, _ = _risk_terms(index, beta)
    value = float(index.tie_counts @ log_s - index.event_x_sum @ np.asarray(beta, float))
    if not np.isfinite(value):
        raise LikelihoodOverflowError("partial likelihood overflowed despite stabilization")
    return value


def gradient(index: RiskIndex, beta: np.ndarray) -> np.ndarray:
    """Gradient of :func:`neg_log_partial_likelihood` at ``beta``."""
    eta, w, sums, log_s, exact = _risk_terms(index, beta)
    c = np.zeros(index.X.shape[0])
    if exact:
        d = index.tie_counts.astype(np.float64)
        _scatter_softmax_exact(eta, index.flat_risk, index.risk_offsets, d, log_s, c)
    else:
        coef = index.tie_counts / sums
        _scatter_softmax(w, index.flat_risk, index.risk_offsets, coef, c)
    g = index.X.T @ c - index.event_x_sum
    if not np.all(np.isfinite(g)):
        raise LikelihoodOverflowError("gradient overflowed despite stabilization")
    return g


def expand_interval_coefficients(
    dataset: SurvivalDataset,
    cut_points: Sequence[float],
    target,
) -> tuple[SurvivalDataset, list[int]]:
    """Replace one column by per-interval copies for piecewise-constant effects.

    ``cut_points`` T_1 < ... < T_{M+1} must cover the observed time range.
    Column ``target`` (name or index) is replaced in place by M columns
    Z_{m}(t) = I(T_m <= t < T_{m+1}) * X_target(t); records are split at
    interior cut points so each output record lies in a single interval.
    A record ending exactly at an interior cut point stays with the interval
    it closes.  Returns the expanded dataset and the indices of the M new
    columns (to be grouped collectively).
    """
    cuts = np.asarray(cut_points, dtype=float)
    if len(cuts) < 2 or np.any(np.diff(cuts) <= 0):
        raise DataError("cut points must be strictly increasing with at least 2 entries")
    if cuts[0] > dataset.start.min() or cuts[-1] < dataset.stop.max():
        raise DataError("cut points do not cover the observed time range")
    if isinstance(target, str):
        try:
            j = dataset.covariate_names.index(target)
        except ValueError:
            raise DataError(f"unknown covariate {target!r}") from None
    else:
        j = int(target)
        if not 0 <= j < dataset.p:
            raise DataError(f"covariate index {j} out of range")
    M = len(cuts) - 1

    rows_id, rows_start, rows_stop, rows_event, rows_x = [], [], [], [], []
    for i in range(dataset.n_records):
        s, e = dataset.start[i], dataset.stop[i]
        interior = cuts[(cuts > s) & (cuts < e)]
        bounds = np.concatenate([[s], interior, [e]])
        for a, b in zip(bounds[:-1], bounds[1:]):
            # interval index: the piece [a, b) sits in [T_m, T_{m+1})
            m = int(np.searchsorted(cuts, a, side="right") - 1)
            m = min(m, M - 1)
            z = np.zeros(M)
            z[m] = dataset.X[i, j]
            rows_id.append(dataset.subject_ids[i])
            rows_start.append(a)
            rows_stop.append(b)
            rows_event.append(int(dataset.event[i]) if b == e else 0)
            rows_x.append(np.concatenate([dataset.X[i, :j], z, dataset.X[i, j + 1:]]))

    names = list(dataset.covariate_names)
    base = names[j]
    new_names = [f"{base}@{m + 1}" for m in range(M)]
    names[j:j + 1] = new_names
    out = SurvivalDataset(np.array(rows_id, dtype=object), np.array(rows_start),
                          np.array(rows_stop), np.array(rows_event, dtype=np.int8),
                          np.array(rows_x), tuple(names))
    return out, list(range(j, j + M))


def standardize_dataset(dataset: SurvivalDataset) -> tuple[SurvivalDataset, np.ndarray]:
    """Scale columns to unit variance; returns (scaled dataset, scale factors).

    Coefficients fitted on the scaled data back-transform by division:
    beta_original = beta_scaled / scales.  Constant columns keep scale 1.
    """
    sd = dataset.X.std(axis=0)
    scales = np.where(sd > 0, sd, 1.0)
    return (
        SurvivalDataset(dataset.subject_ids, dataset.start, dataset.stop,
                        dataset.event, dataset.X / scales, dataset.covariate_names),
        scales,
    )


def read_dataset(path) -> SurvivalDataset:
    """Read comma-separated long-format data: id,start,stop,event,<names...>."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().strip()
        cols = [c.strip() for c in header.split(",")]
        if cols[:4] != ["id", "start", "stop", "event"]:
            raise DataError("header must begin with id,start,stop,event")
        names = cols[4:]
        if not names:
            raise DataError("no covariate columns in header")
        ids, starts, stops, events, xs = [], [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(cols):
                raise DataError(f"line {lineno}: expected {len(cols)} fields, got {len(parts)}")
            try:
                ids.append(parts[0])
                starts.append(float(parts[1]))
                stops.append(float(parts[2]))
                ev = int(parts[3])
                if ev not in (0, 1):
                    raise ValueError
                events.append(ev)
                xs.append([float(v) for v in parts[4:]])
            except ValueError:
                raise DataError(f"line {lineno}: malformed numeric field") from None
    if not ids:
        raise DataError("empty dataset")
    return SurvivalDataset(np.array(ids, dtype=object), np.array(starts), np.array(stops),
                           np.array(events, dtype=np.int8), np.array(xs), tuple(names))


def write_dataset(dataset: SurvivalDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,start,stop,event," + ",".join(dataset.covariate_names) + "\n")
        for i in range(dataset.n_records):
            row = [str(dataset.subject_ids[i]), repr(float(dataset.start[i])),
                   repr(float(dataset.stop[i])), str(int(dataset.event[i]))]
            row.extend(repr(float(v)) for v in dataset.X[i])
            fh.write(",".join(row) + "\n")

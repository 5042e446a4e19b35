"""Proximal gradient descent with backtracking line search.

Minimizes f(beta) + lambda * Omega(beta), where f is the Breslow negative
log partial likelihood and Omega is the weighted overlapping-group
l-infinity penalty.  The step size persists at its last accepted value
across iterations (no re-expansion).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowError, _prox_arrays
from .groups import GroupingStructure, validate
from .survival import LikelihoodOverflowError, RiskIndex, gradient, neg_log_partial_likelihood


class StepSizeError(RuntimeError):
    """Raised when backtracking shrinks the step below any useful size."""


@dataclass(frozen=True)
class FitConfig:
    lam: float
    tol: float = 1e-5
    alpha: float = 0.5
    q0: float = 1.0
    max_iter: int = 10000
    max_backtracks: int = 60

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0 < self.alpha < 1:
            raise ValueError("shrinkage rate alpha must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.q0 <= 0:
            raise ValueError("initial step size must be positive")


@dataclass
class FitResult:
    beta: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    final_step: float
    penalty_value: float
    lam: float

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


def penalty(beta: np.ndarray, structure: GroupingStructure) -> float:
    """Omega(beta) = sum_g w_g * max_{j in g} |beta_j|."""
    beta = np.abs(np.asarray(beta, float))
    return float(sum(g.weight * beta[list(g.members)].max() for g in structure.groups))


def _penalty_arrays(beta_abs, members, weights):
    return float(sum(w * beta_abs[m].max() for m, w in zip(members, weights)))


def fit(
    index: RiskIndex,
    structure: GroupingStructure,
    config: FitConfig,
    warm_start: np.ndarray = None,
) -> FitResult:
    """Solve min_beta f(beta) + lambda * Omega(beta) by proximal gradient descent.

    Starts from zero (or ``warm_start``), takes prox steps
    beta+ = prox_{q*lambda*Omega}(beta - q*grad f(beta)) and shrinks q by
    ``alpha`` whenever the quadratic-model acceptance test fails.  Stops when
    the l1 change between accepted iterates drops below ``tol``; if
    ``max_iter`` is exhausted first, the best iterate is returned with
    ``converged=False``.
    """
    diags = validate(structure)
    if diags:
        raise ValueError("invalid grouping structure: " + "; ".join(diags))
    if structure.p != index.p:
        raise ValueError(f"structure has p={structure.p}, data has p={index.p}")
    members = structure.member_arrays()
    weights = structure.weights()
    p = structure.p

    if warm_start is None:
        beta = np.zeros(p)
    else:
        beta = np.asarray(warm_start, dtype=float).copy()
        if beta.shape != (p,):
            raise ValueError("warm start has the wrong length")

    q = config.q0
    lam = config.lam
    f_val = neg_log_partial_likelihood(index, beta)
    pen_val = _penalty_arrays(np.abs(beta), members, weights)
    trace = [f_val + lam * pen_val]
    best_beta, best_obj = beta.copy(), trace[0]
    converged = False
    iterations = 0

    for _ in range(config.max_iter):
        g = gradient(index, beta)
        accepted = False
        for _bt in range(config.max_backtracks):
            u = beta - q * g
            beta_new, _ = _prox_arrays(u, members, weights, q * lam, p)
            delta = beta_new - beta
            l1_step = float(np.abs(delta).sum())
            if l1_step < config.tol:
                # fixed-point residual below tolerance: the next accepted
                # iterate could not move by tol, so stop without entering the
                # rounding-noise regime of the f comparison
                converged = True
                break
            sq = float(delta @ delta)
            try:
                f_new = neg_log_partial_likelihood(index, beta_new)
            except LikelihoodOverflowError:
                f_new = np.inf
            if f_new <= f_val + float(g @ delta) + sq / (2.0 * q):
                accepted = True
                break
            q *= config.alpha
            if q < 1e-14 * config.q0:
                raise StepSizeError(
                    "step size underflow during line search; gradient or data may be invalid"
                )
        if converged:
            if trace[-1] <= best_obj:
                best_beta, best_obj = beta, trace[-1]
            break
        if not accepted:
            raise StepSizeError(f"no acceptable step within {config.max_backtracks} backtracks")

        pen_new = _penalty_arrays(np.abs(beta_new), members, weights)
        obj_new = f_new + lam * pen_new
        trace.append(obj_new)
        beta, f_val, pen_val = beta_new, f_new, pen_new
        iterations += 1
        if obj_new <= best_obj:
            best_beta, best_obj = beta.copy(), obj_new

    if not converged:
        beta = best_beta
        pen_val = _penalty_arrays(np.abs(beta), members, weights)
    return FitResult(beta, np.asarray(trace), iterations, converged, q, pen_val, lam)

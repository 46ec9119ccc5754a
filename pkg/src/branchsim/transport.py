"""Discrete optimal transport between uniform empirical measures.

Three solver routes, all producing a `TransportPlan`:

* `quantile_coupling` — monotone (quantile-block) pairing of sorted 1-D
  samples; exact optimum for squared-distance cost, any pair of sizes.
  Block overlaps are computed in integer arithmetic, so marginals are exact.
* `solve_assignment` — exact equal-size solver (shortest augmenting paths via
  scipy); ties broken toward the lexicographically smallest permutation for
  instances up to `LEXICOGRAPHIC_CAP` rows.
* `solve_entropic` — log-domain Sinkhorn iterations, rounded to exactly
  feasible marginals; the attained cost is an upper estimate and the plan
  carries a certified suboptimality bound from feasible dual potentials.

`sample_birth_position` realizes the birth-position coupling rule: the atom
index comes from the integer part of the uniform coordinate rho and the
partner position is sampled from that atom's plan row using the fractional
part of rho, so the result is a deterministic function of (state, rho,
reference).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import DimensionError, EmptyReference, NoConvergence

__all__ = [
    "ASSIGNMENT_CAP",
    "LEXICOGRAPHIC_CAP",
    "TransportPlan",
    "index_of",
    "solve_assignment",
    "quantile_coupling",
    "solve_entropic",
    "squared_distance_matrix",
    "sample_birth_position",
]

ASSIGNMENT_CAP = 512
LEXICOGRAPHIC_CAP = 12

MARGINAL_TOL = 1e-9
SINKHORN_TOL = 1e-6


@dataclass(frozen=True)
class TransportPlan:
    """Coupling of two uniform empirical measures, stored as sparse triplets.

    Row sums are 1/source_size and column sums 1/target_size; ``exact`` marks
    plans produced by an exact solver (monotone pairing or assignment).
    """

    source_size: int
    target_size: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    attained_cost: float
    exact: bool = True
    suboptimality_bound: float = 0.0

    def marginal_errors(self) -> tuple[float, float]:
        row_sums = np.bincount(self.rows, weights=self.weights, minlength=self.source_size)
        col_sums = np.bincount(self.cols, weights=self.weights, minlength=self.target_size)
        row_err = float(np.abs(row_sums - 1.0 / self.source_size).max())
        col_err = float(np.abs(col_sums - 1.0 / self.target_size).max())
        return row_err, col_err

    def recompute_cost(self, xs: np.ndarray, ys: np.ndarray) -> float:
        xs = np.atleast_2d(np.asarray(xs, dtype=float).T).T
        ys = np.atleast_2d(np.asarray(ys, dtype=float).T).T
        diff = xs[self.rows] - ys[self.cols]
        return float(np.sum(self.weights * np.einsum("ij,ij->i", diff, diff)))

    def row_conditional(self, row: int) -> tuple[np.ndarray, np.ndarray]:
        """Partner indices and conditional probabilities for one source atom."""
        sel = self.rows == row
        cols = self.cols[sel]
        w = self.weights[sel]
        total = w.sum()
        if total <= 0:
            raise ValueError(f"plan row {row} carries no mass")
        order = np.argsort(cols, kind="stable")
        return cols[order], (w / total)[order]

    def to_triplets(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.rows, self.cols, self.weights)]


def index_of(rho: float) -> int:
    """1-based atom index selected by a nonnegative uniform coordinate."""
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    return int(math.floor(rho)) + 1


def squared_distance_matrix(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=float).T).T
    ys = np.atleast_2d(np.asarray(ys, dtype=float).T).T
    diff = xs[:, None, :] - ys[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _assignment_cost(cost: np.ndarray) -> tuple[np.ndarray, float]:
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm, float(cost[rows, cols].sum())


def _lexicographic_refine(cost: np.ndarray, optimum: float) -> np.ndarray:
    """Smallest permutation (in lexicographic order) attaining the optimum.

    Fixes rows one at a time, testing candidate columns in ascending order
    with an exact sub-assignment feasibility check.  Quadratic in instance
    size times one assignment solve, so reserved for small instances.
    """
    n = cost.shape[0]
    tol = 1e-9 * max(1.0, abs(optimum))
    available = list(range(n))
    perm = np.empty(n, dtype=np.int64)
    budget = optimum
    for i in range(n):
        chosen = None
        for j in available:
            remaining = [c for c in available if c != j]
            if remaining:
                sub = cost[np.ix_(range(i + 1, n), remaining)]
                _, sub_cost = _assignment_cost(sub)
            else:
                sub_cost = 0.0
            if cost[i, j] + sub_cost <= budget + tol:
                chosen = j
                break
        if chosen is None:  # numerically impossible; guard against drift
            chosen = available[0]
        perm[i] = chosen
        budget -= cost[i, chosen]
        available.remove(chosen)
    return perm


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact equal-size assignment: permutation (0-based) and optimal cost.

    For instances up to LEXICOGRAPHIC_CAP rows, ties between optimal
    permutations are broken toward the lexicographically smallest one; above
    that the (deterministic) solver output is returned as-is.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    perm, total = _assignment_cost(cost)
    if cost.shape[0] <= LEXICOGRAPHIC_CAP:
        perm = _lexicographic_refine(cost, total)
        total = float(cost[np.arange(cost.shape[0]), perm].sum())
    return perm, total


def permutation_plan(perm: np.ndarray, cost_matrix: np.ndarray) -> TransportPlan:
    n = len(perm)
    rows = np.arange(n, dtype=np.int64)
    cols = np.asarray(perm, dtype=np.int64)
    weights = np.full(n, 1.0 / n)
    attained = float(cost_matrix[rows, cols].sum() / n)
    return TransportPlan(n, n, rows, cols, weights, attained, exact=True)


def _require_1d(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    return arr


def monotone_blocks(n: int, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quantile-block overlap triplets for sizes (n, m), integer-exact.

    Returns (rows, cols, weights); weights are overlap lengths of the row
    interval [i/n, (i+1)/n) with the column interval [j/m, (j+1)/m).
    """
    bounds = np.union1d(np.arange(n + 1, dtype=np.int64) * m, np.arange(m + 1, dtype=np.int64) * n)
    starts = bounds[:-1]
    lengths = np.diff(bounds)
    rows = starts // m
    cols = starts // n
    weights = lengths / float(n * m)
    return rows.astype(np.int64), cols.astype(np.int64), weights


def quantile_coupling(x: np.ndarray, y: np.ndarray) -> TransportPlan:
    """Monotone pairing of two sorted 1-D samples; exact squared-cost optimum."""
    x = _require_1d(x, "x")
    y = _require_1d(y, "y")
    if x.size == 0 or y.size == 0:
        raise EmptyReference("quantile coupling needs nonempty samples")
    if np.any(np.diff(x) < 0) or np.any(np.diff(y) < 0):
        raise ValueError("quantile_coupling expects sorted inputs")
    rows, cols, weights = monotone_blocks(x.size, y.size)
    cost = float(np.sum(weights * (x[rows] - y[cols]) ** 2))
    return TransportPlan(x.size, y.size, rows, cols, weights, cost, exact=True)


def _sinkhorn_potentials(
    cost: np.ndarray, epsilon: float, max_iter: int, tol: float
) -> tuple[np.ndarray, np.ndarray, float]:
    n, m = cost.shape
    log_a = -math.log(n)
    log_b = -math.log(m)
    f = np.zeros(n)
    g = np.zeros(m)
    err = np.inf
    for _ in range(max_iter):
        f = epsilon * (log_a - logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g = epsilon * (log_b - logsumexp((f[:, None] - cost) / epsilon, axis=0))
        log_plan = (f[:, None] + g[None, :] - cost) / epsilon
        row_sums = np.exp(logsumexp(log_plan, axis=1))
        err = float(np.abs(row_sums - 1.0 / n).max())
        if err <= tol:
            break
    return f, g, err


def _round_to_feasible(plan: np.ndarray, n: int, m: int) -> np.ndarray:
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    row_sums = plan.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        row_scale = np.where(row_sums > 0, np.minimum(1.0, a / row_sums), 0.0)
    plan = plan * row_scale[:, None]
    col_sums = plan.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        col_scale = np.where(col_sums > 0, np.minimum(1.0, b / col_sums), 0.0)
    plan = plan * col_scale[None, :]
    missing_a = a - plan.sum(axis=1)
    missing_b = b - plan.sum(axis=0)
    total_missing = missing_a.sum()
    if total_missing > 0:
        plan = plan + np.outer(missing_a, missing_b) / total_missing
    return plan


def solve_entropic(
    xs: np.ndarray,
    ys: np.ndarray,
    epsilon: float,
    max_iter: int = 2000,
    cost_matrix: np.ndarray | None = None,
    tol: float = SINKHORN_TOL,
) -> TransportPlan:
    """Entropically regularized plan, rounded to exact uniform marginals.

    The attained cost is always >= the unregularized optimum; the gap to a
    feasible dual lower bound is stored as ``suboptimality_bound``.
    Raises NoConvergence if the pre-rounding marginal violation stays above
    ``tol`` after ``max_iter`` iterations.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    cost = squared_distance_matrix(xs, ys) if cost_matrix is None else np.asarray(cost_matrix, float)
    n, m = cost.shape
    f, g, err = _sinkhorn_potentials(cost, epsilon, max_iter, tol)
    if err > tol:
        raise NoConvergence(
            f"marginal violation {err:.3e} > {tol:.1e} after {max_iter} Sinkhorn iterations"
        )
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    plan = _round_to_feasible(plan, n, m)
    attained = float(np.sum(plan * cost))
    # Feasible dual pair by c-transform of the Sinkhorn column potential.
    u = (cost - g[None, :]).min(axis=1)
    lower = float(u.sum() / n + g.sum() / m)
    rows, cols = np.nonzero(plan > 0)
    return TransportPlan(
        n,
        m,
        rows.astype(np.int64),
        cols.astype(np.int64),
        plan[rows, cols],
        attained,
        exact=False,
        suboptimality_bound=max(0.0, attained - lower),
    )


def default_epsilon(xs: np.ndarray, ys: np.ndarray) -> float:
    """Regularization scale: 1% of the median pairwise squared distance."""
    sq = squared_distance_matrix(xs, ys)
    med = float(np.median(sq))
    scale = float(sq.max()) if med <= 0 else med
    return max(0.01 * scale, 1e-12)


def _monotone_row(i: int, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Column indices and conditional probabilities of row i in the monotone plan."""
    lo = (i * m) // n
    hi = ((i + 1) * m + n - 1) // n  # exclusive
    cols = np.arange(lo, hi, dtype=np.int64)
    upper = np.minimum((cols + 1) * n, (i + 1) * m)
    lower = np.maximum(cols * n, i * m)
    overlap = (upper - lower).astype(float)
    keep = overlap > 0
    cols, overlap = cols[keep], overlap[keep]
    return cols, overlap / overlap.sum()


def _sample_from_row(cols: np.ndarray, probs: np.ndarray, u: float) -> int:
    cum = np.cumsum(probs)
    k = int(np.searchsorted(cum, u, side="right"))
    return int(cols[min(k, len(cols) - 1)])


def sample_birth_position(
    state_atoms: np.ndarray,
    rho: float,
    reference_sample: np.ndarray,
    rng=None,
    assignment_cap: int = ASSIGNMENT_CAP,
) -> tuple[int, np.ndarray]:
    """Coupled birth draw: (1-based parent index, partner position).

    The optimal plan between the state empirical (size N) and the reference
    empirical (size M) is computed (monotone pairing in d=1, assignment for
    equal small sizes, entropic otherwise) and the partner is sampled from
    the parent's plan row using frac(rho) as the uniform variate.  ``rng`` is
    accepted for interface compatibility but never consumed: the draw is a
    deterministic function of (state, rho, reference).
    """
    state = np.atleast_2d(np.asarray(state_atoms, dtype=float).T).T
    reference = np.atleast_2d(np.asarray(reference_sample, dtype=float).T).T
    n = state.shape[0]
    m = reference.shape[0]
    if m == 0:
        raise EmptyReference("birth-position sampling needs a nonempty reference sample")
    if not 0 <= rho < n:
        raise ValueError(f"rho must lie in [0, {n}), got {rho}")
    parent = index_of(rho)
    u = rho - math.floor(rho)
    d = state.shape[1]

    if d == 1:
        state_flat = state[:, 0]
        order = np.argsort(state_flat, kind="stable")
        rank_of = np.empty(n, dtype=np.int64)
        rank_of[order] = np.arange(n)
        ref_sorted = np.sort(reference[:, 0], kind="stable")
        cols, probs = _monotone_row(int(rank_of[parent - 1]), n, m)
        j = _sample_from_row(cols, probs, u)
        return parent, np.array([ref_sorted[j]])

    if n == m and n <= assignment_cap:
        cost = squared_distance_matrix(state, reference)
        perm, _ = solve_assignment(cost)
        return parent, reference[perm[parent - 1]].copy()

    plan = solve_entropic(state, reference, epsilon=default_epsilon(state, reference))
    cols, probs = plan.row_conditional(parent - 1)
    j = _sample_from_row(cols, probs, u)
    return parent, reference[j].copy()

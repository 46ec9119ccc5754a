"""Distances and rate functions for the convergence experiments.

`w2`/`w1` route to the cheapest exact solver (quantile pairing in d=1, exact
assignment for equal small sizes) and fall back to the entropic solver, whose
value is an upper estimate and is flagged as inexact.

The dual bounded-Lipschitz distance between a population state and the limit
flow is reported as a certified interval: `bl_upper` follows the chain
mass * (truncated-cost coupling of the normalized measures) + |mass gap|,
while `bl_lower` maximizes |<mu - nu, phi>| over a random dictionary of
clipped affine ridges with unit bounded-Lipschitz norm.  The sandwich
bl_lower <= bl_upper holds exactly for any coupling used by the upper bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import transport
from .branching import CoupledState
from .errors import ExcludedCase
from .measures import ProbabilityEmpirical, WeightedPointMeasure, mass, normalize

__all__ = [
    "RateParams",
    "DistanceReport",
    "DISTANCE_COLUMNS",
    "fg_rate",
    "w2",
    "w2_squared",
    "w1",
    "bl_upper",
    "bl_lower",
    "coupling_gap",
    "ip_error",
]


@dataclass(frozen=True)
class RateParams:
    """Dimension and moment order entering the empirical W2 rate."""

    dimension: int
    moment_order: float

    def __post_init__(self):
        d, q = self.dimension, self.moment_order
        if d < 1:
            raise ExcludedCase(f"dimension must be >= 1, got {d}")
        if q <= 2:
            raise ExcludedCase(f"moment order must exceed 2, got {q}")
        if d <= 4 and abs(q - 4.0) < 1e-12:
            raise ExcludedCase("moment order 4 is excluded for dimensions <= 4")
        if d > 4 and abs(q - d / (d - 2.0)) < 1e-12:
            raise ExcludedCase(f"moment order d/(d-2) = {d/(d-2):.6g} is excluded for d = {d}")


def fg_rate(params: RateParams, n: int) -> float:
    """Piecewise rate bounding E[W2^2] of an i.i.d. empirical measure of size n."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    d, q = params.dimension, params.moment_order
    tail = n ** (-(q - 2.0) / q)
    if d < 4:
        return n**-0.5 + tail
    if d == 4:
        return n**-0.5 * math.log(1.0 + n) + tail
    return n ** (-2.0 / d) + tail


@dataclass(frozen=True)
class W2Result:
    squared: float
    exact: bool


def _empirical_atoms(p: ProbabilityEmpirical | np.ndarray) -> np.ndarray:
    if isinstance(p, ProbabilityEmpirical):
        return p.atoms
    return np.atleast_2d(np.asarray(p, dtype=float).T).T


def _w2_detail(p, r, cap: int = transport.ASSIGNMENT_CAP) -> W2Result:
    xs, ys = _empirical_atoms(p), _empirical_atoms(r)
    if xs.shape[1] != ys.shape[1]:
        raise ValueError("measures must share a dimension")
    if xs.shape[1] == 1:
        plan = transport.quantile_coupling(np.sort(xs[:, 0]), np.sort(ys[:, 0]))
        return W2Result(plan.attained_cost, True)
    if xs.shape[0] == ys.shape[0] and xs.shape[0] <= cap:
        cost = transport.squared_distance_matrix(xs, ys)
        _, total = transport.solve_assignment(cost)
        return W2Result(total / xs.shape[0], True)
    plan = transport.solve_entropic(xs, ys, epsilon=transport.default_epsilon(xs, ys))
    return W2Result(plan.attained_cost, False)


def w2_squared(p, r, cap: int = transport.ASSIGNMENT_CAP) -> float:
    return max(0.0, _w2_detail(p, r, cap).squared)


def w2(p, r, cap: int = transport.ASSIGNMENT_CAP) -> float:
    """2-Wasserstein distance between empirical probability measures."""
    return math.sqrt(w2_squared(p, r, cap))


def _ground_cost(xs: np.ndarray, ys: np.ndarray, truncate: float | None) -> np.ndarray:
    cost = np.sqrt(transport.squared_distance_matrix(xs, ys))
    if truncate is not None:
        cost = np.minimum(cost, truncate)
    return cost


def _linear_cost(p, r, truncate: float | None, cap: int) -> float:
    """Transport cost with ground cost |x-y| (optionally truncated).

    Exact for equal sizes up to ``cap`` (assignment) and for untruncated 1-D
    instances (monotone pairing).  Otherwise an upper estimate: the monotone
    coupling evaluated under the requested cost in d=1, the entropic plan
    elsewhere.
    """
    xs, ys = _empirical_atoms(p), _empirical_atoms(r)
    n, m = xs.shape[0], ys.shape[0]
    if n == m and n <= cap:
        _, total = transport.solve_assignment(_ground_cost(xs, ys, truncate))
        return total / n
    if xs.shape[1] == 1:
        x = np.sort(xs[:, 0])
        y = np.sort(ys[:, 0])
        rows, cols, weights = transport.monotone_blocks(n, m)
        gaps = np.abs(x[rows] - y[cols])
        if truncate is not None:
            gaps = np.minimum(gaps, truncate)
        return float(np.sum(weights * gaps))
    if n * m > 1 << 24:
        raise ValueError(f"linear-cost transport instance too large ({n} x {m})")
    plan = transport.solve_entropic(
        xs, ys, epsilon=transport.default_epsilon(xs, ys), cost_matrix=_ground_cost(xs, ys, truncate)
    )
    return plan.attained_cost


def w1(p, r, cap: int = transport.ASSIGNMENT_CAP) -> float:
    """1-Wasserstein distance (exact in d=1 and for equal small sizes)."""
    return max(0.0, _linear_cost(p, r, None, cap))


def bl_upper(
    m: WeightedPointMeasure,
    r_mass: float,
    r_law: ProbabilityEmpirical,
    cap: int = transport.ASSIGNMENT_CAP,
) -> float:
    """Upper bound on the dual bounded-Lipschitz distance to the limit state.

    mass * (coupling cost with ground cost |x-y| ^ 2-truncation) + |mass gap|;
    for the empty state the bound degenerates to the limit mass itself.
    """
    if r_mass <= 0:
        raise ValueError(f"reference mass must be positive, got {r_mass}")
    if m.is_empty:
        return float(r_mass)
    own_mass = float(mass(m))
    truncated = _linear_cost(normalize(m), r_law, 2.0, cap)
    return own_mass * truncated + abs(own_mass - float(r_mass))


def bl_lower(
    m: WeightedPointMeasure,
    r_mass: float,
    r_law: ProbabilityEmpirical,
    dictionary_size: int = 128,
    rng: np.random.Generator | None = None,
) -> float:
    """Certified lower bound: best of a dictionary of unit-norm ridge functions.

    Each test function is x -> clip(s (u.x - c), -1, 1) / max(s, 1) with a
    random direction u on the sphere, a center c inside the data range, and a
    log-uniform slope s; every such function has Lipschitz constant and sup
    norm at most 1, so the reported value never exceeds `bl_upper`.
    """
    if dictionary_size < 1:
        raise ValueError("dictionary size must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    ref_atoms = r_law.atoms
    d = ref_atoms.shape[1]
    pooled = ref_atoms if m.is_empty else np.vstack([m.atoms, ref_atoms])
    directions = rng.normal(size=(dictionary_size, d))
    norms = np.linalg.norm(directions, axis=1)
    norms[norms == 0] = 1.0
    directions /= norms[:, None]
    proj_pool = pooled @ directions.T  # (n_pool, D)
    lo, hi = proj_pool.min(axis=0), proj_pool.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    centers = rng.uniform(lo, hi)
    slopes = np.exp(rng.uniform(np.log(0.5 / span), np.log(8.0 / span)))
    scale = np.maximum(slopes, 1.0)

    def dictionary_means(atoms: np.ndarray) -> np.ndarray:
        proj = atoms @ directions.T
        vals = np.clip(slopes * (proj - centers), -1.0, 1.0) / scale
        return vals.mean(axis=0)

    ref_side = float(r_mass) * dictionary_means(ref_atoms)
    if m.is_empty:
        return float(np.abs(ref_side).max())
    own_side = float(mass(m)) * dictionary_means(m.atoms)
    return float(np.abs(own_side - ref_side).max())


def coupling_gap(state: CoupledState) -> float:
    """(1/scale) sum of squared pair distances; zero for the empty state."""
    if state.n_alive == 0:
        return 0.0
    diff = state.x - state.y
    return float(np.einsum("ij,ij->", diff, diff) / state.scale)


def ip_error(samples, limit_mass: float, p: int) -> float:
    """L^p deviation statistic of mass samples from the limit mass."""
    if p not in (1, 2, 4):
        raise ValueError(f"p must be one of (1, 2, 4), got {p}")
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("at least one mass sample required")
    return float(np.mean(np.abs(samples - limit_mass) ** p) ** (1.0 / p))


DISTANCE_COLUMNS = (
    "K",
    "replicate",
    "t",
    "w2sq_mu_nu",
    "w2sq_nu_ref",
    "bl_upper",
    "bl_lower",
    "mass_gap",
    "coupling_gap",
    "n_over_k",
)


@dataclass(frozen=True)
class DistanceReport:
    """One row of the experiment table (see DISTANCE_COLUMNS)."""

    scale: int
    replicate: int
    t: float
    w2sq_mu_nu: float
    w2sq_nu_ref: float
    bl_upper: float
    bl_lower: float
    mass_gap: float
    coupling_gap: float
    n_over_k: float

    def as_row(self) -> tuple:
        return (
            self.scale,
            self.replicate,
            self.t,
            self.w2sq_mu_nu,
            self.w2sq_nu_ref,
            self.bl_upper,
            self.bl_lower,
            self.mass_gap,
            self.coupling_gap,
            self.n_over_k,
        )

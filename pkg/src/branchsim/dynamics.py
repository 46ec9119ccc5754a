"""Diffusion coefficients, interaction kernels, mass laws, and the limit flow.

Between population events each particle follows

    dX = b(X, H*field(X)) dt + sigma(X, G*field(X)) dB,

where ``field`` is a weighted point measure and the kernels (G, H) feed the
diffusion and drift coefficients respectively.  The deterministic limit flow
is represented by a self-consistent ensemble (`ReferenceFlow`): a large
sample approximating the normalized limit law on a time grid together with
the autonomous mass track (logistic for the density-dependent model, linear
for the time-varying per-capita variant).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import ConfigError
from .measures import ProbabilityEmpirical, WeightedPointMeasure, as_atoms
from .streams import generator

__all__ = [
    "Kernel",
    "Coefficients",
    "ConstantRates",
    "TimeVaryingRates",
    "RateSpec",
    "ReferenceFlow",
    "gaussian_kernel",
    "constant_kernel",
    "convolve",
    "convolve_field",
    "euler_step",
    "euler_step_batch",
    "logistic_mass",
    "logistic_mass_rk4",
    "linear_mass",
    "evolve_reference",
]


@dataclass(frozen=True)
class Kernel:
    """Nonnegative bounded Lipschitz kernel with declared bounds.

    ``evaluator`` maps an (n, d) array of displacements to (n,) values in
    [0, sup_bound].  The declared bounds are metadata validated by sampling;
    they enter diagnostics, not the dynamics themselves.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    lipschitz_bound: float
    sup_bound: float

    def __call__(self, displacements: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(displacements)), dtype=float)

    def validate(self, dimension: int, rng: np.random.Generator, samples: int = 256) -> None:
        """Spot-check range and Lipschitz estimate on sampled displacement pairs."""
        z1 = rng.normal(scale=2.0, size=(samples, dimension))
        z2 = z1 + rng.normal(scale=0.5, size=(samples, dimension))
        v1, v2 = self(z1), self(z2)
        if np.any(v1 < -1e-12) or np.any(v1 > self.sup_bound + 1e-9):
            raise ValueError("kernel values leave [0, sup_bound] on sampled points")
        gaps = np.abs(v1 - v2)
        dists = np.linalg.norm(z1 - z2, axis=1)
        if np.any(gaps > self.lipschitz_bound * dists + 1e-9):
            raise ValueError("kernel violates its declared Lipschitz bound on sampled pairs")


def gaussian_kernel(amplitude: float = 1.0, width: float = 1.0) -> Kernel:
    def evaluator(z: np.ndarray) -> np.ndarray:
        sq = np.einsum("ij,ij->i", z, z)
        return amplitude * np.exp(-0.5 * sq / width**2)

    lipschitz = amplitude * math.exp(-0.5) / width
    return Kernel(evaluator, lipschitz_bound=lipschitz, sup_bound=amplitude)


def constant_kernel(value: float = 1.0) -> Kernel:
    return Kernel(lambda z: np.full(z.shape[0], float(value)), 0.0, float(value))


@dataclass(frozen=True)
class Coefficients:
    """Drift b(x, v) and diffusion sigma(x, v) with Lipschitz metadata.

    Both callables are vectorized: ``x`` is (n, d) and ``v`` is (n,) (the
    kernel field at each particle) or None when ``measure_free``.  ``drift``
    returns (n, d); ``diffusion`` may return (n,) for isotropic scalars,
    (n, d) for diagonal matrices, or (n, d, d) for full matrices.
    ``sigma_growth`` is the constant in |sigma(x, v)| <= C (1 + |v|).
    """

    drift: Callable
    diffusion: Callable
    drift_lipschitz: float
    diffusion_lipschitz: float
    sigma_growth: float
    measure_free: bool = False

    def validate(self, dimension: int, rng: np.random.Generator, samples: int = 128) -> None:
        x = rng.normal(size=(samples, dimension))
        v = None if self.measure_free else np.abs(rng.normal(size=samples))
        sig = np.asarray(self.diffusion(x, v), dtype=float)
        norms = _diffusion_norms(sig, dimension)
        bound = self.sigma_growth * (1.0 + (0.0 if v is None else v))
        if np.any(norms > bound + 1e-9):
            raise ValueError("diffusion violates its declared growth bound on sampled inputs")


def _diffusion_norms(sig: np.ndarray, dimension: int) -> np.ndarray:
    if sig.ndim == 1:
        return np.abs(sig) * math.sqrt(dimension)
    if sig.ndim == 2:
        return np.linalg.norm(sig, axis=1)
    return np.linalg.norm(sig, axis=(1, 2))


@dataclass(frozen=True)
class ConstantRates:
    """Density-dependent model: per-capita birth rate r, death rate c*N/K."""

    birth: float
    death: float

    def __post_init__(self):
        if self.birth < 0 or self.death < 0:
            raise ValueError("rates must be nonnegative")


@dataclass(frozen=True)
class TimeVaryingRates:
    """Per-capita time-varying rates r(t), c(t), bounded by birth_max/death_max."""

    birth: Callable[[float], float]
    death: Callable[[float], float]
    birth_max: float
    death_max: float

    def validate(self, times: Sequence[float]) -> None:
        for t in times:
            r, c = self.birth(t), self.death(t)
            if not (0 <= r <= self.birth_max + 1e-12):
                raise ValueError(f"birth rate {r} at t={t} outside [0, {self.birth_max}]")
            if not (0 <= c <= self.death_max + 1e-12):
                raise ValueError(f"death rate {c} at t={t} outside [0, {self.death_max}]")


RateSpec = ConstantRates | TimeVaryingRates


@dataclass(frozen=True)
class ReferenceFlow:
    """Time grid of limit-flow snapshots: mass track plus M-particle samples."""

    times: np.ndarray
    masses: np.ndarray
    samples: np.ndarray  # (len(times), M, d)
    euler_step: float

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "masses", np.asarray(self.masses, dtype=float))
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("reference time grid must be strictly increasing")
        if np.any(self.masses <= 0):
            raise ConfigError("reference mass track must stay positive")
        if self.samples.shape[0] != self.times.size:
            raise ConfigError("one sample per grid time required")

    @property
    def ensemble_size(self) -> int:
        return self.samples.shape[1]

    @property
    def dimension(self) -> int:
        return self.samples.shape[2]

    def index_at(self, t: float) -> int:
        """Nearest earlier snapshot (piecewise-constant lookup in time)."""
        idx = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        return max(idx, 0)

    def sample_at(self, t: float) -> np.ndarray:
        return self.samples[self.index_at(t)]

    def mass_at(self, t: float) -> float:
        return float(self.masses[self.index_at(t)])


def convolve(kernel: Kernel, m: WeightedPointMeasure, x: np.ndarray) -> float:
    """(1/scale) sum_i k(x - x_i); zero against the empty measure."""
    if m.is_empty:
        return 0.0
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(kernel(x - m.atoms).sum() / m.scale)


def convolve_field(
    kernel: Kernel,
    source_atoms: np.ndarray,
    weight_per_atom: float,
    points: np.ndarray,
    chunk: int = 1 << 20,
) -> np.ndarray:
    """Kernel field of a weighted atom cloud evaluated at many points."""
    points = np.atleast_2d(points)
    n_src = source_atoms.shape[0]
    if n_src == 0:
        return np.zeros(points.shape[0])
    out = np.empty(points.shape[0])
    rows_per_chunk = max(1, chunk // n_src)
    for start in range(0, points.shape[0], rows_per_chunk):
        block = points[start : start + rows_per_chunk]
        diffs = (block[:, None, :] - source_atoms[None, :, :]).reshape(-1, points.shape[1])
        vals = kernel(diffs).reshape(block.shape[0], n_src)
        out[start : start + rows_per_chunk] = vals.sum(axis=1) * weight_per_atom
    return out


def apply_diffusion(sig: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Apply a (n,)/(n,d)/(n,d,d)-shaped diffusion coefficient to increments."""
    sig = np.asarray(sig, dtype=float)
    if sig.ndim == 1:
        return sig[:, None] * dw
    if sig.ndim == 2:
        return sig * dw
    return np.einsum("nij,nj->ni", sig, dw)


def euler_step_batch(
    coeffs: Coefficients,
    kernels: tuple[Kernel, Kernel],
    field_atoms: np.ndarray,
    field_weight: float,
    x: np.ndarray,
    h: float,
    dw: np.ndarray,
) -> np.ndarray:
    """One explicit step for a batch of particles against a common field."""
    if coeffs.measure_free:
        v_drift = v_diff = None
    else:
        kernel_g, kernel_h = kernels
        v_diff = convolve_field(kernel_g, field_atoms, field_weight, x)
        v_drift = convolve_field(kernel_h, field_atoms, field_weight, x)
    drift = np.asarray(coeffs.drift(x, v_drift), dtype=float)
    sig = coeffs.diffusion(x, v_diff)
    return x + drift * h + apply_diffusion(sig, dw)


def euler_step(
    coeffs: Coefficients,
    kernels: tuple[Kernel, Kernel],
    field_measure: WeightedPointMeasure,
    x: np.ndarray,
    h: float,
    dw: np.ndarray,
) -> np.ndarray:
    """Single-particle explicit step: x + b(x, H*field(x)) h + sigma(x, G*field(x)) dW."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    dw = np.asarray(dw, dtype=float).reshape(1, -1)
    out = euler_step_batch(
        coeffs, kernels, field_measure.atoms, 1.0 / field_measure.scale, x, h, dw
    )
    return out[0]


def logistic_mass(n0: float, r: float, c: float, t: float) -> float:
    """Closed-form solution of dn = (r - c n) n dt from n0 > 0."""
    if n0 <= 0:
        raise ValueError(f"initial mass must be positive, got {n0}")
    if r == 0:
        return n0 / (1.0 + c * n0 * t)
    if c == 0:
        return n0 * math.exp(r * t)
    decay = math.exp(-r * t)
    return r * n0 / (r * decay + c * n0 * (1.0 - decay))


def logistic_mass_rk4(n0: float, r: float, c: float, t: float, steps: int = 4096) -> float:
    """Classic fourth-order Runge-Kutta integration of the logistic mass law."""

    def rhs(n: float) -> float:
        return (r - c * n) * n

    h = t / steps
    n = n0
    for _ in range(steps):
        k1 = rhs(n)
        k2 = rhs(n + 0.5 * h * k1)
        k3 = rhs(n + 0.5 * h * k2)
        k4 = rhs(n + h * k3)
        n += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return n


def linear_mass(n0: float, rates: RateSpec, t: float) -> float:
    """Solution n0 * exp(integral of (r(s) - c(s)) ds) of the linear mass law."""
    if n0 <= 0:
        raise ValueError(f"initial mass must be positive, got {n0}")
    if isinstance(rates, ConstantRates):
        return n0 * math.exp((rates.birth - rates.death) * t)
    if t == 0:
        return n0
    net, _ = integrate.quad(lambda s: rates.birth(s) - rates.death(s), 0.0, t, limit=200)
    return n0 * math.exp(net)


def mass_track(rates: RateSpec, n0: float, t: float) -> float:
    """Deterministic limit mass at time t for either rate specification."""
    if isinstance(rates, ConstantRates):
        return logistic_mass(n0, rates.birth, rates.death, t)
    return linear_mass(n0, rates, t)


def evolve_reference(
    coeffs: Coefficients,
    kernels: tuple[Kernel, Kernel],
    rates: RateSpec,
    initial_sample: ProbabilityEmpirical,
    n0: float,
    grid: np.ndarray,
    h_ref: float,
    key: tuple,
) -> ReferenceFlow:
    """Self-consistent ensemble approximation of the limit flow.

    M particles advance by Euler steps of size ``h_ref`` (with partial steps
    onto grid times); in the interacting regime the coefficient field at each
    sub-step is the current mass times the ensemble's own empirical law, read
    for all particles before any moves (a per-step barrier).  Each particle
    owns its keyed Gaussian stream, so in the measure-free regime the
    ensemble members are mutually independent by construction.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
        raise ConfigError("reference grid must be a strictly increasing 1-D array")
    if abs(grid[0]) > 1e-12:
        raise ConfigError("reference grid must start at time 0")
    if h_ref <= 0:
        raise ConfigError(f"reference Euler step must be positive, got {h_ref}")
    m = initial_sample.num_atoms
    if m < 2:
        raise ConfigError("reference ensemble needs at least 2 particles")
    dim = initial_sample.dimension

    positions = initial_sample.atoms.copy()
    snapshots = [positions.copy()]
    masses = [mass_track(rates, n0, float(grid[0]))]

    # Sub-step schedule: h_ref-sized steps with a partial step onto each grid time.
    sub_times: list[tuple[float, float]] = []  # (start, dt)
    for a, b in zip(grid[:-1], grid[1:]):
        t = float(a)
        while t < b - 1e-12:
            dt = min(h_ref, b - t)
            sub_times.append((t, dt))
            t += dt
    n_steps = len(sub_times)

    # One keyed stream per ensemble member; all increments drawn up front.
    increments = np.empty((n_steps, m, dim))
    for i in range(m):
        gen = generator(*key, "ref", i)
        increments[:, i, :] = gen.standard_normal((n_steps, dim))

    grid_ptr = 1
    for step, (t, dt) in enumerate(sub_times):
        dw = increments[step] * math.sqrt(dt)
        if coeffs.measure_free:
            field_atoms, weight = positions, 0.0
        else:
            field_atoms = positions
            weight = mass_track(rates, n0, t) / m
        positions = euler_step_batch(coeffs, kernels, field_atoms, weight, positions, dt, dw)
        t_next = t + dt
        while grid_ptr < grid.size and t_next >= grid[grid_ptr] - 1e-12:
            snapshots.append(positions.copy())
            masses.append(mass_track(rates, n0, float(grid[grid_ptr])))
            grid_ptr += 1

    if grid_ptr != grid.size:
        raise ConfigError("internal error: sub-step schedule did not cover the grid")
    return ReferenceFlow(grid, np.array(masses), np.stack(snapshots), h_ref)

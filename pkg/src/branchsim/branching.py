"""Coupled binary branching diffusions: event scheduling and bookkeeping.

Two particle systems (the interacting population X and its auxiliary
population Y) share birth/death events, indices, and Brownian streams.  At a
birth, the X-system duplicates the selected parent while the Y-system places
the newborn at a position drawn from the optimal coupling between the current
X-empirical and the reference ensemble; the new pair receives the next unused
Gaussian stream.  At a death the selected pair is removed from both systems
by a left shift, and its stream is retired permanently.

Event times are exact: with density-dependent rates the total event rate is
constant between jumps (Gillespie sampling); with bounded time-varying
per-capita rates proposals are thinned against the constant envelope, where
rejected proposals advance time but consume no stream draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import transport
from .dynamics import (
    Coefficients,
    ConstantRates,
    Kernel,
    RateSpec,
    ReferenceFlow,
    TimeVaryingRates,
    euler_step_batch,
)
from .errors import ConfigError, EmptyReference
from .measures import WeightedPointMeasure
from .streams import GaussianStreamBank, generator

__all__ = [
    "EXTINCT",
    "CoupledState",
    "EventRecord",
    "Observation",
    "SimulationConfig",
    "CoupledTrajectory",
    "total_event_rate",
    "next_event",
    "event_kind",
    "apply_birth",
    "apply_death",
    "simulate_coupled",
    "simulate_single",
]


class _Extinct:
    """Sentinel: the population is empty and no further events can occur."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EXTINCT"


EXTINCT = _Extinct()


@dataclass(frozen=True)
class CoupledState:
    """Paired particle arrays with labelling into the global stream sequence.

    ``labels[n]`` is the 1-based index of the Gaussian stream driving pair n;
    labels are strictly increasing with labels[-1] == total_created, and
    total_created - n_alive equals the number of deaths so far.
    """

    time: float
    scale: int
    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    total_created: int

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise ValueError("paired systems must have identical shapes")
        if self.labels.shape[0] != self.x.shape[0]:
            raise ValueError("one stream label per pair required")

    @property
    def n_alive(self) -> int:
        return self.x.shape[0]

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    def check_labels(self) -> None:
        if self.n_alive:
            if np.any(np.diff(self.labels) <= 0):
                raise AssertionError("stream labels must be strictly increasing")
            if int(self.labels[-1]) != self.total_created:
                raise AssertionError("last label must equal the cumulative pair count")


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str  # "birth" | "death"
    rho: float
    index: int  # 1-based parent (birth) or victim (death)
    y_position: np.ndarray | None
    cost_contribution: float | None
    n_after: int
    total_after: int


@dataclass(frozen=True)
class Observation:
    time: float
    x_atoms: np.ndarray
    y_atoms: np.ndarray | None
    labels: np.ndarray
    total_created: int

    @property
    def n_alive(self) -> int:
        return self.x_atoms.shape[0]


@dataclass(frozen=True)
class SimulationConfig:
    scale: int
    coefficients: Coefficients
    kernels: tuple[Kernel, Kernel]
    rates: RateSpec
    initial: WeightedPointMeasure
    horizon: float
    step: float
    observation_times: np.ndarray
    reference: ReferenceFlow | None = None

    def __post_init__(self):
        obs = np.asarray(self.observation_times, dtype=float)
        object.__setattr__(self, "observation_times", obs)
        if self.horizon <= 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.step <= 0:
            raise ConfigError(f"Euler step must be positive, got {self.step}")
        if obs.ndim != 1 or (obs.size and (np.any(np.diff(obs) <= 0))):
            raise ConfigError("observation times must be strictly increasing")
        if obs.size and (obs[0] < 0 or obs[-1] > self.horizon + 1e-12):
            raise ConfigError("observation times must lie inside [0, horizon]")
        if self.initial.scale != self.scale:
            raise ConfigError("initial measure scale must match the configured scale")
        if self.reference is not None and self.reference.times[-1] < self.horizon - 1e-9:
            raise ConfigError("reference grid must cover [0, horizon]")


@dataclass
class CoupledTrajectory:
    observations: list[Observation]
    events: list[EventRecord]
    final_state: CoupledState
    streams_touched: set[int]


def total_event_rate(n_alive: int, scale: int, rates: RateSpec, t: float = 0.0) -> float:
    """Total jump intensity (the thinning envelope for time-varying rates)."""
    if n_alive <= 0:
        return 0.0
    if isinstance(rates, ConstantRates):
        return n_alive * (rates.birth + rates.death * n_alive / scale)
    return n_alive * (rates.birth_max + rates.death_max)


def _draw_event(
    n_alive: int,
    scale: int,
    t_now: float,
    rates: RateSpec,
    rng: np.random.Generator,
    t_max: float,
):
    """Next accepted event (time, rho, theta), None if none before t_max."""
    if n_alive == 0:
        return EXTINCT
    if isinstance(rates, ConstantRates):
        rate = total_event_rate(n_alive, scale, rates)
        if rate <= 0:
            return None
        t = t_now + rng.exponential(1.0 / rate)
        if t > t_max:
            return None
        rho = rng.uniform(0.0, n_alive)
        theta = rng.uniform(0.0, rates.birth + rates.death * n_alive / scale)
        return t, rho, theta
    envelope = rates.birth_max + rates.death_max
    if envelope <= 0:
        return None
    rate = n_alive * envelope
    t = t_now
    while True:
        t = t + rng.exponential(1.0 / rate)
        if t > t_max:
            return None
        rho = rng.uniform(0.0, n_alive)
        theta = rng.uniform(0.0, envelope)
        if theta <= rates.birth(t) + rates.death(t):
            return t, rho, theta


def next_event(
    state: CoupledState,
    rates: RateSpec,
    rng: np.random.Generator,
    t_max: float = math.inf,
):
    """Draw the next event after state.time; EXTINCT when no particle lives."""
    return _draw_event(state.n_alive, state.scale, state.time, rates, rng, t_max)


def event_kind(rates: RateSpec, t: float, theta: float) -> str:
    birth_level = rates.birth if isinstance(rates, ConstantRates) else rates.birth(t)
    return "birth" if theta <= birth_level else "death"


def apply_birth(
    state: CoupledState,
    rho: float,
    reference_sample: np.ndarray,
    rng=None,
) -> CoupledState:
    """Duplicate the selected parent in X; couple the Y newborn by transport."""
    parent, y_new = transport.sample_birth_position(state.x, rho, reference_sample, rng)
    x_new = state.x[parent - 1]
    return replace(
        state,
        x=np.vstack([state.x, x_new[None, :]]),
        y=np.vstack([state.y, y_new[None, :]]),
        labels=np.append(state.labels, state.total_created + 1),
        total_created=state.total_created + 1,
    )


def apply_death(state: CoupledState, rho: float) -> CoupledState:
    """Remove the selected pair from both systems by left shift; retire its stream."""
    victim = transport.index_of(rho)
    if not 1 <= victim <= state.n_alive:
        raise ValueError(f"victim index {victim} outside 1..{state.n_alive}")
    keep = np.arange(state.n_alive) != victim - 1
    return replace(
        state,
        x=state.x[keep],
        y=state.y[keep],
        labels=state.labels[keep],
    )


class _Simulator:
    def __init__(self, config: SimulationConfig, key: tuple, coupled: bool, audit: bool):
        self.config = config
        self.coupled = coupled
        self.audit = audit
        if coupled and config.reference is None:
            raise ConfigError("coupled simulation requires a reference flow")
        dim = config.initial.dimension
        self.bank = GaussianStreamBank((*key, "pair"), dim)
        self.event_rng = generator(*key, "events")
        self.x = config.initial.atoms.copy()
        self.y = self.x.copy() if coupled else None
        self.labels = np.arange(1, self.x.shape[0] + 1, dtype=np.int64)
        self.total = self.x.shape[0]
        self.events: list[EventRecord] = []
        self.observations: list[Observation] = []
        self.t = 0.0

    # -- diffusion ---------------------------------------------------------
    def _advance(self, t_stop: float) -> None:
        cfg = self.config
        h = cfg.step
        t = self.t
        while t < t_stop - 1e-12:
            boundary = (math.floor(t / h + 1e-9) + 1) * h
            t_next = min(boundary, t_stop)
            dt = t_next - t
            if dt <= 1e-15:
                t = t_next
                continue
            if self.x.shape[0] > 0:
                dw = self.bank.draw(self.labels) * math.sqrt(dt)
                new_x = euler_step_batch(
                    cfg.coefficients, cfg.kernels, self.x, 1.0 / cfg.scale, self.x, dt, dw
                )
                if self.coupled:
                    ref = cfg.reference
                    ref_atoms = ref.sample_at(t)
                    weight = ref.mass_at(t) / ref_atoms.shape[0]
                    self.y = euler_step_batch(
                        cfg.coefficients, cfg.kernels, ref_atoms, weight, self.y, dt, dw
                    )
                self.x = new_x
            t = t_next
        self.t = t_stop

    # -- events ------------------------------------------------------------
    def _apply_event(self, t_ev: float, rho: float, theta: float) -> None:
        cfg = self.config
        kind = event_kind(cfg.rates, t_ev, theta)
        parent = transport.index_of(rho)
        if kind == "birth":
            x_new = self.x[parent - 1]
            if self.coupled:
                ref_atoms = cfg.reference.sample_at(t_ev)
                _, y_new = transport.sample_birth_position(self.x, rho, ref_atoms)
                cost = float(np.sum((x_new - y_new) ** 2))
                self.y = np.vstack([self.y, y_new[None, :]])
            else:
                y_new, cost = None, None
            self.x = np.vstack([self.x, x_new[None, :]])
            self.total += 1
            self.labels = np.append(self.labels, self.total)
            self.events.append(
                EventRecord(t_ev, "birth", rho, parent, y_new, cost, self.x.shape[0], self.total)
            )
        else:
            keep = np.arange(self.x.shape[0]) != parent - 1
            self.x = self.x[keep]
            if self.coupled:
                self.y = self.y[keep]
            self.labels = self.labels[keep]
            self.events.append(
                EventRecord(t_ev, "death", rho, parent, None, None, self.x.shape[0], self.total)
            )
        if self.audit:
            n = self.x.shape[0]
            assert self.labels.shape[0] == n
            assert self.y is None or self.y.shape[0] == n
            if n:
                assert np.all(np.diff(self.labels) > 0)
                assert int(self.labels[-1]) == self.total

    def _record(self) -> None:
        self.observations.append(
            Observation(
                self.t,
                self.x.copy(),
                None if self.y is None else self.y.copy(),
                self.labels.copy(),
                self.total,
            )
        )

    def run(self) -> CoupledTrajectory:
        cfg = self.config
        obs = cfg.observation_times
        ptr = 0
        while ptr < obs.size and obs[ptr] <= 1e-15:
            self._record()
            ptr += 1
        pending = _draw_event(
            self.x.shape[0], cfg.scale, self.t, cfg.rates, self.event_rng, cfg.horizon
        )
        while True:
            t_obs = obs[ptr] if ptr < obs.size else math.inf
            t_ev = pending[0] if isinstance(pending, tuple) else math.inf
            target = min(t_obs, t_ev, cfg.horizon)
            self._advance(target)
            if isinstance(pending, tuple) and t_ev <= target + 1e-15:
                _, rho, theta = pending
                self._apply_event(t_ev, rho, theta)
                pending = _draw_event(
                    self.x.shape[0], cfg.scale, self.t, cfg.rates, self.event_rng, cfg.horizon
                )
                continue
            if ptr < obs.size and t_obs <= target + 1e-15:
                self._record()
                ptr += 1
                continue
            break
        state = CoupledState(
            self.t,
            cfg.scale,
            self.x,
            self.x.copy() if self.y is None else self.y,
            self.labels,
            self.total,
        )
        return CoupledTrajectory(self.observations, self.events, state, set(self.bank.touched))


def _as_key(seed) -> tuple:
    return tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)


def simulate_coupled(config: SimulationConfig, seed, audit: bool = False) -> CoupledTrajectory:
    """Run both systems jointly: shared events, labels, and Gaussian streams."""
    return _Simulator(config, _as_key(seed), coupled=True, audit=audit).run()


def simulate_single(config: SimulationConfig, seed, audit: bool = False) -> CoupledTrajectory:
    """Run the interacting population alone, consuming the same streams.

    With the same (config, seed) the trajectory equals the X-marginal of
    `simulate_coupled` bit for bit: event draws and per-pair stream draws
    follow the identical schedule, and birth-position sampling for the
    auxiliary system consumes no randomness.
    """
    return _Simulator(config, _as_key(seed), coupled=False, audit=audit).run()

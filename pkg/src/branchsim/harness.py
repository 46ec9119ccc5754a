"""Experiment harness: configuration, initial data, K-grid runs, slope fits.

A convergence experiment builds one shared reference flow, runs coupled
simulations over a grid of carrying capacities with independent replicates,
records a `DistanceReport` per (K, replicate, observation time), aggregates
means with standard errors, and fits log-log slopes of the headline
statistics against K.  Seeding is keyed by (master_seed, K, replicate), so
runs are reproducible and cells are independent of grid composition.
"""
from __future__ import annotations

import configparser
import csv
import json
import math
import time as _time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from ._version import __version__ as _code_version
from .branching import SimulationConfig, simulate_coupled, simulate_single
from .dynamics import (
    Coefficients,
    ConstantRates,
    Kernel,
    RateSpec,
    ReferenceFlow,
    TimeVaryingRates,
    evolve_reference,
    gaussian_kernel,
    mass_track,
)
from .errors import ConfigError, DegenerateInput, InsufficientSamples
from .measures import ProbabilityEmpirical, WeightedPointMeasure, atom_records, mass
from .metrics import (
    DISTANCE_COLUMNS,
    DistanceReport,
    RateParams,
    bl_lower,
    bl_upper,
    ip_error,
    w2_squared,
)
from .streams import generator
from .transport import quantile_coupling

__all__ = [
    "InitialSpec",
    "ExperimentConfig",
    "ExperimentResult",
    "SlopeFit",
    "PRESETS",
    "build_preset",
    "build_rates",
    "generate_initial",
    "build_reference",
    "run_convergence_experiment",
    "fit_slope",
    "chaoticity_diagnostic",
    "fg_check",
    "ip_decay_experiment",
    "mass_law_experiment",
    "load_config",
    "default_config",
    "write_distances_csv",
    "write_summary_json",
]


# ---------------------------------------------------------------------------
# Model presets
# ---------------------------------------------------------------------------

def _ou_preset(dimension: int) -> tuple[Coefficients, tuple[Kernel, Kernel]]:
    """Mean-reverting unit-noise diffusion; coefficients ignore the field."""
    coeffs = Coefficients(
        drift=lambda x, v: -x,
        diffusion=lambda x, v: np.ones(x.shape[0]),
        drift_lipschitz=1.0,
        diffusion_lipschitz=0.0,
        sigma_growth=2.0 * math.sqrt(dimension),
        measure_free=True,
    )
    kernel = gaussian_kernel(1.0, 1.0)
    return coeffs, (kernel, kernel)


def _frozen_preset(dimension: int) -> tuple[Coefficients, tuple[Kernel, Kernel]]:
    """No motion at all: only the event dynamics act."""
    coeffs = Coefficients(
        drift=lambda x, v: np.zeros_like(x),
        diffusion=lambda x, v: np.zeros(x.shape[0]),
        drift_lipschitz=0.0,
        diffusion_lipschitz=0.0,
        sigma_growth=1.0,
        measure_free=True,
    )
    kernel = gaussian_kernel(1.0, 1.0)
    return coeffs, (kernel, kernel)


def _interacting_preset(dimension: int) -> tuple[Coefficients, tuple[Kernel, Kernel]]:
    """Mean reversion plus a bounded response to the local kernel field."""

    def drift(x, v):
        out = -x.copy()
        if v is not None:
            out = out + 0.3 * np.tanh(v)[:, None]
        return out

    def diffusion(x, v):
        if v is None:
            return np.ones(x.shape[0])
        return 0.7 + 0.3 / (1.0 + v**2)

    coeffs = Coefficients(
        drift=drift,
        diffusion=diffusion,
        drift_lipschitz=1.3,
        diffusion_lipschitz=0.3,
        sigma_growth=2.0 * math.sqrt(dimension),
        measure_free=False,
    )
    kernel = gaussian_kernel(1.0, 1.0)
    return coeffs, (kernel, kernel)


PRESETS = {
    "ou": _ou_preset,
    "frozen": _frozen_preset,
    "interacting": _interacting_preset,
}

INITIAL_LAWS = ("gaussian", "pareto", "point")
RATE_MODES = ("logistic", "linear")
INITIAL_MODES = ("fixed", "poisson")


def build_preset(name: str, dimension: int) -> tuple[Coefficients, tuple[Kernel, Kernel]]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](dimension)


def build_rates(rate_mode: str, birth: float, death: float) -> RateSpec:
    """'logistic': death rate scales with population density; 'linear': per-capita."""
    if rate_mode == "logistic":
        return ConstantRates(birth, death)
    if rate_mode == "linear":
        return TimeVaryingRates(
            birth=lambda t: birth, death=lambda t: death, birth_max=birth, death_max=death
        )
    raise ConfigError(f"unknown rate mode {rate_mode!r}; choose from {RATE_MODES}")


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialSpec:
    mode: str  # "fixed" | "poisson"
    law: str  # "gaussian" | "pareto" | "point"
    mass: float  # limit mass n0
    pareto_alpha: float = 3.05

    def __post_init__(self):
        if self.mode not in INITIAL_MODES:
            raise ConfigError(f"unknown initial mode {self.mode!r}")
        if self.law not in INITIAL_LAWS:
            raise ConfigError(f"unknown initial law {self.law!r}")
        if self.mass <= 0:
            raise ConfigError(f"initial mass must be positive, got {self.mass}")
        if self.law == "pareto" and self.pareto_alpha <= 2:
            raise ConfigError("pareto tail index must exceed 2 for a finite second moment")


def sample_law(spec: InitialSpec, count: int, dimension: int, rng: np.random.Generator) -> np.ndarray:
    if spec.law == "gaussian":
        return rng.standard_normal((count, dimension))
    if spec.law == "pareto":
        magnitude = 1.0 + rng.pareto(spec.pareto_alpha, size=(count, dimension))
        signs = rng.integers(0, 2, size=(count, dimension)) * 2 - 1
        return magnitude * signs
    return np.zeros((count, dimension))


def generate_initial(
    spec: InitialSpec, scale: int, dimension: int, rng: np.random.Generator
) -> WeightedPointMeasure:
    """Initial population: fixed-count or Poisson-count i.i.d. atoms."""
    if spec.mode == "fixed":
        count = int(round(scale * spec.mass))
    else:
        count = int(rng.poisson(scale * spec.mass))
    atoms = sample_law(spec, count, dimension, rng)
    return WeightedPointMeasure(atoms, scale)


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    dimension: int = 1
    moment_order: float = 10.0
    k_grid: tuple[int, ...] = (50, 100, 200, 400, 800, 1600, 3200)
    replicas: int = 100
    horizon: float = 1.0
    observation_times: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    master_seed: int = 20250810
    threads: int = 1
    preset: str = "ou"
    birth_rate: float = 1.0
    death_rate: float = 0.5
    rate_mode: str = "logistic"
    initial_mode: str = "fixed"
    initial_law: str = "gaussian"
    initial_mass: float = 1.0
    pareto_alpha: float = 3.05
    reference_size: int = 0  # 0 -> 8 * max(k_grid)
    reference_step: float = 0.02
    euler_step: float = 0.02
    assignment_cap: int = 512
    bl_dictionary: int = 128
    out_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        if not self.k_grid or any(k < 1 for k in self.k_grid):
            raise ConfigError("k_grid must hold positive integers")
        if list(self.k_grid) != sorted(set(self.k_grid)):
            raise ConfigError("k_grid must be strictly increasing")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.horizon <= 0 or self.euler_step <= 0 or self.reference_step <= 0:
            raise ConfigError("horizon and step sizes must be positive")
        obs = self.observation_times
        if not obs or any(t < 0 or t > self.horizon + 1e-12 for t in obs):
            raise ConfigError("observation times must lie inside [0, horizon]")
        if list(obs) != sorted(set(obs)):
            raise ConfigError("observation times must be strictly increasing")
        if self.resolved_reference_size < max(self.k_grid):
            raise ConfigError("reference ensemble must be at least as large as max(k_grid)")
        RateParams(self.dimension, self.moment_order)  # raises ExcludedCase if invalid
        self.initial_spec()  # mode/law/mass validation
        build_preset(self.preset, self.dimension)
        build_rates(self.rate_mode, self.birth_rate, self.death_rate)
        if self.assignment_cap < 1 or self.bl_dictionary < 1:
            raise ConfigError("assignment_cap and bl_dictionary must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def resolved_reference_size(self) -> int:
        return self.reference_size if self.reference_size > 0 else 8 * max(self.k_grid)

    def initial_spec(self) -> InitialSpec:
        return InitialSpec(self.initial_mode, self.initial_law, self.initial_mass, self.pareto_alpha)

    def rates(self) -> RateSpec:
        return build_rates(self.rate_mode, self.birth_rate, self.death_rate)

    def model(self) -> tuple[Coefficients, tuple[Kernel, Kernel]]:
        return build_preset(self.preset, self.dimension)

    def echo(self) -> dict:
        """Deterministic config echo (execution-only fields excluded)."""
        data = asdict(self)
        data.pop("out_dir")
        data.pop("threads")
        data["k_grid"] = list(self.k_grid)
        data["observation_times"] = list(self.observation_times)
        return data


_CONFIG_SCHEMA = {
    "experiment": {
        "dimension": int,
        "moment_order": float,
        "k_grid": "int_list",
        "replicas": int,
        "horizon": float,
        "observation_times": "float_list",
        "master_seed": int,
        "threads": int,
    },
    "model": {
        "preset": str,
        "birth_rate": float,
        "death_rate": float,
        "rate_mode": str,
    },
    "initial": {
        "mode": str,
        "law": str,
        "mass": float,
        "pareto_alpha": float,
    },
    "reference": {
        "ensemble_size": int,
        "euler_step": float,
    },
    "numerics": {
        "euler_step": float,
        "assignment_cap": int,
        "bl_dictionary": int,
    },
    "output": {
        "directory": str,
    },
}

_KEY_TO_FIELD = {
    ("experiment", "dimension"): "dimension",
    ("experiment", "moment_order"): "moment_order",
    ("experiment", "k_grid"): "k_grid",
    ("experiment", "replicas"): "replicas",
    ("experiment", "horizon"): "horizon",
    ("experiment", "observation_times"): "observation_times",
    ("experiment", "master_seed"): "master_seed",
    ("experiment", "threads"): "threads",
    ("model", "preset"): "preset",
    ("model", "birth_rate"): "birth_rate",
    ("model", "death_rate"): "death_rate",
    ("model", "rate_mode"): "rate_mode",
    ("initial", "mode"): "initial_mode",
    ("initial", "law"): "initial_law",
    ("initial", "mass"): "initial_mass",
    ("initial", "pareto_alpha"): "pareto_alpha",
    ("reference", "ensemble_size"): "reference_size",
    ("reference", "euler_step"): "reference_step",
    ("numerics", "euler_step"): "euler_step",
    ("numerics", "assignment_cap"): "assignment_cap",
    ("numerics", "bl_dictionary"): "bl_dictionary",
    ("output", "directory"): "out_dir",
}


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse a flat key-value config file; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    overrides: dict = {}
    for section in parser.sections():
        if section not in _CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _CONFIG_SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kind = _CONFIG_SCHEMA[section][key]
            try:
                if kind == "int_list":
                    value = tuple(int(tok) for tok in raw.split())
                elif kind == "float_list":
                    value = tuple(float(tok) for tok in raw.split())
                elif kind is int:
                    value = int(raw)
                elif kind is float:
                    value = float(raw)
                else:
                    value = raw.strip()
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
            overrides[_KEY_TO_FIELD[(section, key)]] = value
    return ExperimentConfig(**overrides)


def default_config(**overrides) -> ExperimentConfig:
    return replace(ExperimentConfig(), **overrides) if overrides else ExperimentConfig()


# ---------------------------------------------------------------------------
# Reference flow
# ---------------------------------------------------------------------------


def build_reference(config: ExperimentConfig) -> ReferenceFlow:
    """One limit-flow ensemble per experiment, shared across all (K, replicate)."""
    coeffs, kernels = config.model()
    rates = config.rates()
    m = config.resolved_reference_size
    steps = max(1, int(math.ceil(config.horizon / config.reference_step - 1e-9)))
    grid = np.linspace(0.0, config.horizon, steps + 1)
    init_rng = generator(config.master_seed, "reference", "init")
    sample = ProbabilityEmpirical(
        sample_law(config.initial_spec(), m, config.dimension, init_rng)
    )
    return evolve_reference(
        coeffs,
        kernels,
        rates,
        sample,
        config.initial_mass,
        grid,
        config.horizon / steps,
        key=(config.master_seed, "reference"),
    )


# ---------------------------------------------------------------------------
# Per-cell work and the convergence experiment
# ---------------------------------------------------------------------------


def _cell_simulation_config(
    config: ExperimentConfig, reference: ReferenceFlow | None, scale: int, rep: int
) -> tuple[SimulationConfig, tuple]:
    cell_key = (config.master_seed, "cell", scale, rep)
    coeffs, kernels = config.model()
    init_rng = generator(*cell_key, "init")
    initial = generate_initial(config.initial_spec(), scale, config.dimension, init_rng)
    sim = SimulationConfig(
        scale=scale,
        coefficients=coeffs,
        kernels=kernels,
        rates=config.rates(),
        initial=initial,
        horizon=config.horizon,
        step=config.euler_step,
        observation_times=np.asarray(config.observation_times, dtype=float),
        reference=reference,
    )
    return sim, cell_key


def run_cell(config: ExperimentConfig, reference: ReferenceFlow, scale: int, rep: int) -> list[DistanceReport]:
    """Simulate one (K, replicate) cell and score every observation time."""
    sim, cell_key = _cell_simulation_config(config, reference, scale, rep)
    trajectory = simulate_coupled(sim, seed=cell_key)
    rates = config.rates()
    rows: list[DistanceReport] = []
    for t_idx, obs in enumerate(trajectory.observations):
        t = float(obs.time)
        limit_mass = mass_track(rates, config.initial_mass, t)
        ref_sample = reference.sample_at(t)
        ref_law = ProbabilityEmpirical(ref_sample)
        n = obs.n_alive
        n_over_k = n / scale
        state_measure = WeightedPointMeasure(obs.x_atoms, scale)
        bl_rng = generator(*cell_key, "bl", t_idx)
        low = bl_lower(state_measure, limit_mass, ref_law, config.bl_dictionary, bl_rng)
        if n == 0:
            rows.append(
                DistanceReport(
                    scale, rep, t, 0.0, 0.0, float(limit_mass), low, float(limit_mass), 0.0, 0.0
                )
            )
            continue
        mu_hat = ProbabilityEmpirical(obs.x_atoms)
        nu_hat = ProbabilityEmpirical(obs.y_atoms)
        w2sq_mu_nu = w2_squared(mu_hat, nu_hat, config.assignment_cap)
        w2sq_nu_ref = w2_squared(nu_hat, ref_law, config.assignment_cap)
        upper = bl_upper(state_measure, limit_mass, ref_law, config.assignment_cap)
        gap = float(np.sum((obs.x_atoms - obs.y_atoms) ** 2)) / scale
        rows.append(
            DistanceReport(
                scale,
                rep,
                t,
                w2sq_mu_nu,
                w2sq_nu_ref,
                upper,
                low,
                abs(n_over_k - limit_mass),
                gap,
                n_over_k,
            )
        )
    return rows


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    n_points: int
    max_abs_residual: float

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_points": self.n_points,
            "max_abs_residual": self.max_abs_residual,
        }


def fit_slope(points) -> SlopeFit:
    """Ordinary least squares of log(value) on log(K) with a 95% t-interval."""
    pts = [(float(k), float(v)) for k, v in points]
    if len(pts) < 3:
        raise DegenerateInput(f"slope fit needs at least 3 points, got {len(pts)}")
    ks = np.array([p[0] for p in pts])
    vals = np.array([p[1] for p in pts])
    if np.unique(ks).size != ks.size:
        raise DegenerateInput("slope fit needs distinct K values")
    if np.any(vals <= 0):
        raise DegenerateInput("slope fit needs strictly positive values")
    log_k, log_v = np.log(ks), np.log(vals)
    res = stats.linregress(log_k, log_v)
    dof = len(pts) - 2
    t_crit = float(stats.t.ppf(0.975, dof)) if dof > 0 else math.inf
    resid = log_v - (res.intercept + res.slope * log_k)
    return SlopeFit(
        slope=float(res.slope),
        intercept=float(res.intercept),
        stderr=float(res.stderr),
        ci_low=float(res.slope - t_crit * res.stderr),
        ci_high=float(res.slope + t_crit * res.stderr),
        n_points=len(pts),
        max_abs_residual=float(np.abs(resid).max()),
    )


_AGGREGATE_FIELDS = ("w2sq_mu_nu", "w2sq_nu_ref", "bl_upper", "bl_lower", "mass_gap", "coupling_gap")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[DistanceReport]
    aggregates: dict  # {K: {t: {field: {"mean", "se"}}}}
    per_k_sup: dict  # {K: {field: sup_t of mean}}
    slopes: dict  # {field: SlopeFit}
    branch: dict
    reference_size: int
    wall_time: float

    def summary_dict(self) -> dict:
        return {
            "config": self.config.echo(),
            "code_version": _code_version,
            "reference_size": self.reference_size,
            "aggregates": {
                str(k): {
                    _fmt_time(t): {f: v for f, v in cols.items()} for t, cols in times.items()
                }
                for k, times in self.aggregates.items()
            },
            "per_k_sup": {str(k): v for k, v in self.per_k_sup.items()},
            "slopes": {name: fit.as_dict() for name, fit in self.slopes.items()},
            "branch": self.branch,
        }


def _fmt_time(t: float) -> str:
    return repr(float(t))


def branch_annotation(config: ExperimentConfig) -> dict:
    """Active rate branch and the predicted decay exponent of the BL distance."""
    d, q = config.dimension, config.moment_order
    if d < 4:
        name, base = "d<4", 0.25
    elif d == 4:
        name, base = "d=4", 0.25  # up to the logarithmic factor
    else:
        name, base = "d>4", 1.0 / d
    tail = (q - 2.0) / (2.0 * q)
    predicted = min(base, tail)
    out = {
        "name": name,
        "base_exponent": base,
        "tail_exponent": tail,
        "predicted_exponent": predicted,
        "moment_order": q,
    }
    if config.initial_mode == "poisson":
        out["initial_mass_exponent"] = 0.5
    return out


def run_convergence_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Full K-grid experiment; writes distances.csv / summary.json when out_dir set."""
    start = _time.perf_counter()
    reference = build_reference(config)
    cells = [(k, rep) for k in config.k_grid for rep in range(config.replicas)]
    if config.threads > 1:
        all_rows = Parallel(n_jobs=config.threads, batch_size=1)(
            delayed(run_cell)(config, reference, k, rep) for k, rep in cells
        )
    else:
        all_rows = [run_cell(config, reference, k, rep) for k, rep in cells]
    rows = [row for cell_rows in all_rows for row in cell_rows]
    rows.sort(key=lambda r: (r.scale, r.replicate, r.t))

    aggregates: dict = {}
    per_k_sup: dict = {}
    for k in config.k_grid:
        aggregates[k] = {}
        sups = {f: 0.0 for f in _AGGREGATE_FIELDS}
        for t in config.observation_times:
            cell = [r for r in rows if r.scale == k and abs(r.t - t) < 1e-12]
            cols = {}
            for f in _AGGREGATE_FIELDS:
                vals = np.array([getattr(r, f) for r in cell])
                mean = float(vals.mean())
                se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
                cols[f] = {"mean": mean, "se": se}
                sups[f] = max(sups[f], mean)
            aggregates[k][float(t)] = cols
        per_k_sup[k] = sups

    slopes = {}
    for f in ("bl_upper", "coupling_gap", "w2sq_nu_ref", "mass_gap"):
        points = [(k, per_k_sup[k][f]) for k in config.k_grid if per_k_sup[k][f] > 0]
        if len(points) >= 3:
            slopes[f] = fit_slope(points)

    result = ExperimentResult(
        config=config,
        rows=rows,
        aggregates=aggregates,
        per_k_sup=per_k_sup,
        slopes=slopes,
        branch=branch_annotation(config),
        reference_size=reference.ensemble_size,
        wall_time=_time.perf_counter() - start,
    )
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_distances_csv(out / "distances.csv", result.rows)
        write_summary_json(out / "summary.json", result)
        _write_run_info(out / "run_info.json", result)
    return result


# ---------------------------------------------------------------------------
# Persistence (deterministic formatting)
# ---------------------------------------------------------------------------


def _fmt_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_distances_csv(path: str | Path, rows: list[DistanceReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DISTANCE_COLUMNS)
        for row in rows:
            writer.writerow([_fmt_value(v) for v in row.as_row()])


def write_summary_json(path: str | Path, result: ExperimentResult) -> None:
    with open(path, "w") as fh:
        json.dump(result.summary_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_run_info(path: str | Path, result: ExperimentResult) -> None:
    # Volatile metadata lives apart from summary.json so replays stay byte-identical.
    with open(path, "w") as fh:
        json.dump({"wall_time_seconds": result.wall_time}, fh, indent=2)
        fh.write("\n")


def write_events_csv(path: str | Path, events, replicate: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "time", "kind", "rho", "index", "cost_contribution"])
        for ev in events:
            cost = "" if ev.cost_contribution is None else repr(float(ev.cost_contribution))
            writer.writerow(
                [replicate, repr(float(ev.time)), ev.kind, repr(float(ev.rho)), ev.index, cost]
            )


def write_trajectory_csv(path: str | Path, trajectory, replicate: int = 0) -> None:
    dim = trajectory.final_state.dimension
    header = ["replicate_id", "time", "system_tag", "atom_index"] + [
        f"x_{i + 1}" for i in range(dim)
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for obs in trajectory.observations:
            for rec in atom_records(obs.x_atoms, replicate, obs.time, "mu"):
                writer.writerow([_fmt_value(v) if not isinstance(v, str) else v for v in rec])
            if obs.y_atoms is not None:
                for rec in atom_records(obs.y_atoms, replicate, obs.time, "nu"):
                    writer.writerow([_fmt_value(v) if not isinstance(v, str) else v for v in rec])


# ---------------------------------------------------------------------------
# Stand-alone checks and diagnostics
# ---------------------------------------------------------------------------


def fg_check(
    seed: int = 0,
    exponents: tuple[int, ...] = tuple(range(6, 14)),
    replicas: int = 200,
    reference_grid_size: int = 1 << 15,
) -> dict:
    """Empirical decay of E[W2^2] for 1-D standard Gaussian samples.

    The reference is a deterministic quantile grid of the standard normal.
    Returns per-size means, the fitted log-log slope with its interval, and
    the implied exponent on the W2 (unsquared) scale.
    """
    grid = stats.norm.ppf((np.arange(reference_grid_size) + 0.5) / reference_grid_size)
    rng = generator(seed, "fg-check")
    sizes = [2**e for e in exponents]
    means = []
    for n in sizes:
        vals = np.empty(replicas)
        for r in range(replicas):
            sample = np.sort(rng.standard_normal(n))
            vals[r] = quantile_coupling(sample, grid).attained_cost
        means.append(float(vals.mean()))
    fit = fit_slope(list(zip(sizes, means)))
    return {
        "n_values": sizes,
        "mean_w2sq": means,
        "slope": fit.slope,
        "ci_low": fit.ci_low,
        "ci_high": fit.ci_high,
        "stderr": fit.stderr,
        "w2_scale_exponent": fit.slope / 2.0,
    }


def ip_decay_experiment(
    n0: float = 1.0,
    k_grid: tuple[int, ...] = (100, 316, 1000, 3162, 10000, 31623, 100000),
    replicas: int = 2000,
    p: int = 4,
    seed: int = 0,
) -> tuple[SlopeFit, list[float]]:
    """Decay of the initial-mass L^p deviation for Poisson initial data."""
    rng = generator(seed, "ip-decay")
    values = []
    for k in k_grid:
        masses = rng.poisson(k * n0, size=replicas) / k
        values.append(ip_error(masses, n0, p))
    return fit_slope(list(zip(k_grid, values))), values


def mass_law_experiment(
    config: ExperimentConfig, scale: int, replicas: int, times: tuple[float, ...]
) -> dict:
    """Monte Carlo mass track against the deterministic limit mass law."""
    rates = config.rates()
    obs_config = replace(config, observation_times=tuple(times))
    samples = {t: [] for t in times}
    for rep in range(replicas):
        sim, cell_key = _cell_simulation_config(obs_config, None, scale, rep)
        trajectory = simulate_single(sim, seed=cell_key)
        for obs in trajectory.observations:
            samples[float(obs.time)].append(obs.n_alive / scale)
    report = {}
    for t in times:
        arr = np.array(samples[t])
        mean = float(arr.mean())
        se = float(arr.std(ddof=1) / math.sqrt(arr.size))
        predicted = mass_track(rates, config.initial_mass, t)
        report[t] = {
            "mean": mean,
            "se": se,
            "predicted": predicted,
            "z": (mean - predicted) / se if se > 0 else 0.0,
        }
    return report


def chaoticity_diagnostic(config: ExperimentConfig, j: int, t: float) -> dict:
    """Asymptotic-independence diagnostic for the leading population atoms.

    For each K: across replicates with at least j living particles at time t,
    tests that the first j atom coordinates look like independent draws from
    the reference law (pairwise correlations against zero, per-slot and
    pooled two-sample KS).  Raises InsufficientSamples below 50 qualifying
    replicates.
    """
    if j < 1:
        raise ConfigError("j must be >= 1")
    reference = build_reference(config)
    fresh_rng = generator(config.master_seed, "chaos", "fresh")
    ref_sample = reference.sample_at(t)[:, 0]
    out: dict = {"j": j, "t": t, "per_k": {}}
    run_config = replace(config, observation_times=(t,))
    for k in config.k_grid:
        slots = []
        for rep in range(config.replicas):
            sim, cell_key = _cell_simulation_config(run_config, reference, k, rep)
            trajectory = simulate_coupled(sim, seed=cell_key)
            obs = trajectory.observations[0]
            if obs.n_alive >= j:
                slots.append(obs.x_atoms[:j, 0])
        if len(slots) < 50:
            raise InsufficientSamples(
                f"only {len(slots)} replicates with {j}+ particles at t={t} for K={k}"
            )
        data = np.array(slots)  # (n_qual, j)
        n_qual = data.shape[0]
        if j > 1:
            corr = np.corrcoef(data, rowvar=False)
            off = corr[np.triu_indices(j, k=1)]
            max_abs_corr = float(np.abs(off).max())
        else:
            max_abs_corr = 0.0
        fresh = fresh_rng.permutation(ref_sample)[: max(n_qual, 512)]
        pvalues = [float(stats.ks_2samp(data[:, s], fresh).pvalue) for s in range(j)]
        pooled_p = float(stats.ks_2samp(data.ravel(), fresh).pvalue)
        out["per_k"][k] = {
            "qualifying": n_qual,
            "max_abs_corr": max_abs_corr,
            "corr_limit_3se": 3.0 / math.sqrt(n_qual),
            "ks_pvalues": pvalues,
            "ks_pass_rate": float(np.mean([p > 0.05 for p in pvalues])),
            "pooled_ks_pvalue": pooled_p,
        }
    return out

"""Coupled branching-diffusion simulator and convergence experiment harness."""

from ._version import __version__
from .errors import (
    BranchsimError,
    ConfigError,
    DegenerateInput,
    DimensionError,
    EmptyMeasure,
    EmptyReference,
    ExcludedCase,
    InsufficientSamples,
    NoConvergence,
)
from .measures import ProbabilityEmpirical, WeightedPointMeasure, mass, moment, normalize
from .dynamics import (
    Coefficients,
    ConstantRates,
    Kernel,
    ReferenceFlow,
    TimeVaryingRates,
    convolve,
    euler_step,
    evolve_reference,
    linear_mass,
    logistic_mass,
)
from .transport import (
    TransportPlan,
    index_of,
    quantile_coupling,
    sample_birth_position,
    solve_assignment,
    solve_entropic,
)
from .branching import (
    EXTINCT,
    CoupledState,
    EventRecord,
    SimulationConfig,
    apply_birth,
    apply_death,
    next_event,
    simulate_coupled,
    simulate_single,
    total_event_rate,
)
from .metrics import (
    DistanceReport,
    RateParams,
    bl_lower,
    bl_upper,
    coupling_gap,
    fg_rate,
    ip_error,
    w1,
    w2,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    chaoticity_diagnostic,
    default_config,
    fg_check,
    fit_slope,
    generate_initial,
    load_config,
    run_convergence_experiment,
)

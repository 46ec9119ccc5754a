"""Exception types shared across the package."""


class BranchsimError(Exception):
    """Base class for package-specific failures."""


class EmptyMeasure(BranchsimError):
    """Normalization or a distance was requested for a measure with no atoms."""


class DimensionError(BranchsimError):
    """An operation restricted to a specific dimension got something else."""


class NoConvergence(BranchsimError):
    """An iterative solver stopped before reaching its tolerance."""


class ConfigError(BranchsimError):
    """Invalid or inconsistent configuration input."""


class EmptyReference(BranchsimError):
    """A birth-position sample was requested against an empty reference sample."""


class ExcludedCase(BranchsimError):
    """(dimension, moment order) pair outside the validity of the rate formula."""


class DegenerateInput(BranchsimError):
    """Input does not carry enough information for a fit (too few points, zeros)."""


class InsufficientSamples(BranchsimError):
    """Fewer qualifying Monte Carlo replicas than the diagnostic requires."""

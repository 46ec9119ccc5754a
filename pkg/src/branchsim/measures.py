"""Weighted finite point measures and their normalized empirical counterparts.

The population state is a finite atom list with a common weight 1/scale:
``scale`` is the carrying capacity, so a state with N atoms has total mass
N/scale.  An empty atom list is a legal state (extinction).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyMeasure

__all__ = [
    "WeightedPointMeasure",
    "ProbabilityEmpirical",
    "as_atoms",
    "mass",
    "normalize",
    "moment",
    "atom_records",
    "ATOM_RECORD_HEADER",
]


def as_atoms(points: Iterable | np.ndarray, dimension: int | None = None) -> np.ndarray:
    """Coerce scalars / lists / arrays into a read-only (N, d) float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # A flat list is a list of 1-D points.
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"atoms must be at most 2-dimensional, got shape {arr.shape}")
    if dimension is not None:
        if arr.size == 0:
            arr = arr.reshape(0, dimension)
        elif arr.shape[1] != dimension:
            raise ValueError(f"atoms have dimension {arr.shape[1]}, expected {dimension}")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WeightedPointMeasure:
    """Atoms in R^d, each carrying weight 1/scale.  Empty atom lists allowed."""

    atoms: np.ndarray
    scale: int

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError(f"scale must be a positive integer, got {self.scale}")
        object.__setattr__(self, "atoms", as_atoms(self.atoms))

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.num_atoms == 0


@dataclass(frozen=True)
class ProbabilityEmpirical:
    """Uniform empirical probability measure: at least one atom, weights 1/N."""

    atoms: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "atoms", as_atoms(self.atoms))
        if self.atoms.shape[0] == 0:
            raise EmptyMeasure("an empirical probability measure needs at least one atom")

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1]


def mass(m: WeightedPointMeasure) -> Fraction:
    """Total mass (atom count / scale), exact."""
    return Fraction(m.num_atoms, m.scale)


def normalize(m: WeightedPointMeasure) -> ProbabilityEmpirical:
    """Same atoms with uniform weights.  Undefined (raises) for the null measure."""
    if m.is_empty:
        raise EmptyMeasure("cannot normalize a measure with no atoms")
    return ProbabilityEmpirical(m.atoms)


def moment(p: ProbabilityEmpirical, q: float) -> float:
    """q-th absolute moment (Euclidean norm), (1/N) sum |x_i|^q, for q >= 1."""
    if q < 1:
        raise ValueError(f"moment order must be >= 1, got {q}")
    norms = np.linalg.norm(p.atoms, axis=1)
    return float(np.mean(norms**q))


ATOM_RECORD_HEADER = ("replicate_id", "time", "system_tag", "atom_index")


def atom_records(
    atoms: np.ndarray,
    replicate_id: int,
    time: float,
    system_tag: str,
) -> Iterator[tuple]:
    """Flat row-per-atom records: (replicate_id, time, tag, atom_index, x_1..x_d).

    ``system_tag`` is one of {"mu", "nu", "ref"} in exported files.
    """
    for idx, point in enumerate(np.atleast_2d(atoms)):
        yield (replicate_id, float(time), system_tag, idx, *map(float, point))

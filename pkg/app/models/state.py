"""
Particle and Lagrangian states.
"""

from dataclasses import dataclass, replace
from typing import Any, Dict

import numpy as np
import pandas as pd

from app.core.errors import InputError, OrderingError
from .measure import MASS_TOL, AtomicMeasure, PseudoInverse


def _array(values: Any) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True).reshape(-1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SpeciesState:
    """Atomic configuration of one species: positions, velocities, masses."""

    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        positions, velocities, masses = _array(self.positions), _array(self.velocities), _array(self.masses)
        if not (positions.size == velocities.size == masses.size) or positions.size == 0:
            raise InputError(
                f"species arrays differ in length: {positions.size}/{velocities.size}/{masses.size}"
            )
        if np.any(masses <= 0):
            raise InputError("particle masses must be positive")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_unsorted(cls, positions: Any, velocities: Any, masses: Any) -> "SpeciesState":
        """Sort by position carrying velocities and masses along."""
        positions = np.asarray(positions, dtype=float)
        order = np.argsort(positions, kind="stable")
        return cls(positions[order], np.asarray(velocities, dtype=float)[order],
                   np.asarray(masses, dtype=float)[order])

    @property
    def count(self) -> int:
        return int(self.positions.size)

    @property
    def momentum(self) -> float:
        return float(np.sum(self.masses * self.velocities))

    @property
    def kinetic_energy(self) -> float:
        return float(0.5 * np.sum(self.masses * self.velocities ** 2))

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def check_invariants(self, species: str = "") -> None:
        """Sticky ordering and unit mass; raises OrderingError."""
        if np.any(np.diff(self.positions) < 0):
            raise OrderingError(f"positions of {species or 'species'} are not nondecreasing")
        if abs(self.total_mass - 1.0) > MASS_TOL:
            raise OrderingError(f"mass of {species or 'species'} drifted to {self.total_mass!r}")

    def to_measure(self) -> AtomicMeasure:
        return AtomicMeasure(self.positions, self.masses)


@dataclass(frozen=True)
class TwoSpeciesState:
    rho: SpeciesState
    eta: SpeciesState
    time: float = 0.0

    @property
    def kinetic_energy(self) -> float:
        return self.rho.kinetic_energy + self.eta.kinetic_energy

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for name, species in (("rho", self.rho), ("eta", self.eta)):
            frames.append(pd.DataFrame({
                "time": self.time,
                "species": name,
                "index": np.arange(species.count),
                "position": species.positions,
                "velocity": species.velocities,
                "mass": species.masses,
            }))
        return pd.concat(frames, ignore_index=True)

    def __repr__(self) -> str:
        return f"<TwoSpeciesState(time={self.time}, rho={self.rho.count}, eta={self.eta.count})>"


@dataclass(frozen=True)
class LagrangianState:
    """Grid representation on n uniform cells of (0, 1).

    X, Y are the (nondecreasing) pseudo-inverses, V, W the velocities and
    P, Q the auxiliary variables epsilon*V + X of the rescaled system.
    """

    X: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    W: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    time: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self) -> None:
        sizes = set()
        for name in ("X", "Y", "V", "W", "P", "Q"):
            array = _array(getattr(self, name))
            sizes.add(array.size)
            object.__setattr__(self, name, array)
        if len(sizes) != 1:
            raise InputError(f"all grid fields need the same number of cells, got sizes {sorted(sizes)}")

    @property
    def n_cells(self) -> int:
        return int(self.X.size)

    @property
    def x_inverse(self) -> PseudoInverse:
        return PseudoInverse.uniform(self.X)

    @property
    def y_inverse(self) -> PseudoInverse:
        return PseudoInverse.uniform(self.Y)

    def evolve(self, **changes: Any) -> "LagrangianState":
        return replace(self, **changes)

    def norms(self) -> Dict[str, float]:
        return {name: float(np.sqrt(np.mean(getattr(self, name) ** 2))) for name in ("X", "Y", "V", "W")}

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for name in ("X", "Y", "V", "W"):
            values = getattr(self, name)
            frames.append(pd.DataFrame({
                "time": self.time,
                "field": name,
                "index": np.arange(values.size),
                "value": values,
            }))
        return pd.concat(frames, ignore_index=True)

    def __repr__(self) -> str:
        return f"<LagrangianState(time={self.time}, n_cells={self.n_cells}, epsilon={self.epsilon})>"


@dataclass(frozen=True)
class ForceSample:
    """Force operators (F, G) evaluated at one (X, Y)."""

    F: np.ndarray
    G: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "F", _array(self.F))
        object.__setattr__(self, "G", _array(self.G))

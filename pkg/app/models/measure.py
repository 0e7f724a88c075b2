"""
Atomic measures, quantile functions and grid functions on the mass interval (0, 1).
"""

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Tuple

import numpy as np
import pandas as pd

from app.core.errors import InputError

MASS_TOL = 1e-12


def _frozen_array(values: Any, name: str) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True).reshape(-1)
    if not np.all(np.isfinite(array)):
        raise InputError(f"{name} must be finite")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class AtomicMeasure:
    """Probability measure sum_i masses[i] * delta(positions[i])."""

    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        positions = _frozen_array(self.positions, "positions")
        masses = _frozen_array(self.masses, "masses")
        if positions.size == 0 or positions.size != masses.size:
            raise InputError(
                f"measure needs matching non-empty positions/masses, got {positions.size}/{masses.size}"
            )
        if np.any(masses <= 0):
            raise InputError("atom masses must be positive")
        if np.any(np.diff(positions) < 0):
            raise InputError("atom positions must be nondecreasing")
        total = float(masses.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise InputError(f"total mass must be 1, got {total!r}")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_atoms(cls, atoms: Iterable[Tuple[float, float]]) -> "AtomicMeasure":
        """Build from unsorted (position, mass) pairs."""
        pairs = sorted(atoms, key=lambda atom: atom[0])
        if not pairs:
            raise InputError("measure needs at least one atom")
        positions, masses = zip(*pairs)
        return cls(np.asarray(positions), np.asarray(masses))

    @classmethod
    def dirac(cls, x: float) -> "AtomicMeasure":
        return cls(np.array([x]), np.array([1.0]))

    @classmethod
    def empirical(cls, positions: Iterable[float]) -> "AtomicMeasure":
        """Equal masses 1/n on the sorted positions."""
        xs = np.sort(np.asarray(list(positions), dtype=float))
        return cls(xs, np.full(xs.size, 1.0 / xs.size))

    @property
    def n_atoms(self) -> int:
        return int(self.positions.size)

    def to_dict(self) -> Dict[str, List[float]]:
        return {"positions": self.positions.tolist(), "masses": self.masses.tolist()}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"position": self.positions, "mass": self.masses})

    def __repr__(self) -> str:
        return f"<AtomicMeasure(n_atoms={self.n_atoms})>"


@dataclass(frozen=True)
class PseudoInverse:
    """Nondecreasing step function X(m) = values[i] on [breakpoints[i], breakpoints[i+1])."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        breakpoints = np.array(self.breakpoints, dtype=float, copy=True).reshape(-1)
        values = _frozen_array(self.values, "values")
        if breakpoints.size != values.size + 1 or values.size == 0:
            raise InputError(
                f"need len(breakpoints) == len(values) + 1, got {breakpoints.size} and {values.size}"
            )
        if abs(breakpoints[0]) > MASS_TOL or abs(breakpoints[-1] - 1.0) > MASS_TOL:
            raise InputError("breakpoints must start at 0 and end at 1")
        breakpoints[0], breakpoints[-1] = 0.0, 1.0
        if np.any(np.diff(breakpoints) <= 0):
            raise InputError("cell widths must be strictly positive")
        if np.any(np.diff(values) < 0):
            raise InputError("pseudo-inverse values must be nondecreasing")
        breakpoints.setflags(write=False)
        object.__setattr__(self, "breakpoints", breakpoints)
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, values: Any) -> "PseudoInverse":
        """Values on the uniform n-cell grid of (0, 1)."""
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(np.linspace(0.0, 1.0, values.size + 1), values)

    @property
    def n_cells(self) -> int:
        return int(self.values.size)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def evaluate(self, m: Any) -> np.ndarray:
        """Left-closed cell convention."""
        index = np.searchsorted(self.breakpoints, np.asarray(m, dtype=float), side="right") - 1
        return self.values[np.clip(index, 0, self.n_cells - 1)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"value": self.values, "width": self.widths})

    def __repr__(self) -> str:
        return f"<PseudoInverse(n_cells={self.n_cells})>"


@dataclass(frozen=True)
class GridFunction:
    """Element of L2(0, 1) sampled on the uniform n-cell grid; no ordering required."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen_array(self.values, "values"))

    @classmethod
    def zeros(cls, n_cells: int) -> "GridFunction":
        return cls(np.zeros(n_cells))

    @property
    def n_cells(self) -> int:
        return int(self.values.size)

    def norm(self) -> float:
        return float(np.sqrt(np.mean(self.values ** 2)))


@dataclass(frozen=True)
class ClusterPartition:
    """Maximal runs of (numerically) equal consecutive cells.

    Every cell belongs to exactly one run; runs of length one are singletons.
    """

    starts: np.ndarray
    lengths: np.ndarray
    widths: np.ndarray

    def __post_init__(self) -> None:
        starts = np.asarray(self.starts, dtype=np.int64)
        lengths = np.asarray(self.lengths, dtype=np.int64)
        widths = _frozen_array(self.widths, "widths")
        if starts.size != lengths.size or np.any(lengths < 1):
            raise InputError("invalid run description")
        if int(lengths.sum()) != widths.size or (starts.size and starts[0] != 0):
            raise InputError("runs must tile the grid")
        if np.any(starts[1:] != (starts + lengths)[:-1]):
            raise InputError("runs must be contiguous")
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "widths", widths)

    @classmethod
    def singletons(cls, widths: Any) -> "ClusterPartition":
        widths = np.asarray(widths, dtype=float)
        return cls(np.arange(widths.size), np.ones(widths.size, dtype=np.int64), widths)

    @property
    def n_cells(self) -> int:
        return int(self.widths.size)

    @property
    def n_blocks(self) -> int:
        return int(self.starts.size)

    @property
    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_blocks), self.lengths)

    def runs(self) -> List[Tuple[int, ...]]:
        return [tuple(range(s, s + n)) for s, n in zip(self.starts.tolist(), self.lengths.tolist())]

    def clusters(self) -> List[Tuple[int, ...]]:
        """Runs with at least two cells."""
        return [run for run in self.runs() if len(run) > 1]

    def __repr__(self) -> str:
        return f"<ClusterPartition(n_cells={self.n_cells}, n_blocks={self.n_blocks})>"

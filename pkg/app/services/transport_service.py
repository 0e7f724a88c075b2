"""
One-dimensional optimal transport through quantile functions.

Measures on the line are handled through their pseudo-inverses on (0, 1):
W2 is the L2 distance of pseudo-inverses, the monotone cone is the image of
probability measures, and sticky clusters are runs of equal values.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np
import structlog

from app.core.errors import GridMismatchError, InputError
from app.models.measure import AtomicMeasure, ClusterPartition, GridFunction, PseudoInverse

logger = structlog.get_logger(__name__)

MeasurePair = Tuple[AtomicMeasure, AtomicMeasure]


def pseudo_inverse(mu: AtomicMeasure) -> PseudoInverse:
    """Quantile function X(m) = inf{x : M(x) > m}: breakpoints at cumulative masses."""
    breakpoints = np.concatenate(([0.0], np.cumsum(mu.masses)))
    breakpoints[-1] = 1.0
    return PseudoInverse(breakpoints, mu.positions)


def to_measure(X: PseudoInverse) -> AtomicMeasure:
    """Push-forward of Lebesgue on (0, 1); equal consecutive values become one atom."""
    values = X.values
    starts = np.concatenate(([0], np.flatnonzero(np.diff(values) != 0.0) + 1))
    masses = np.add.reduceat(X.widths, starts)
    return AtomicMeasure(values[starts], masses / masses.sum())


def l2_distance(X: PseudoInverse, Y: PseudoInverse) -> float:
    """Exact L2(0, 1) distance of two step functions on their common refinement."""
    grid = np.union1d(X.breakpoints, Y.breakpoints)
    widths = np.diff(grid)
    midpoints = 0.5 * (grid[:-1] + grid[1:])
    gap = X.evaluate(midpoints) - Y.evaluate(midpoints)
    return math.sqrt(float(np.sum(widths * gap * gap)))


def grid_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L2 distance of two functions on the same uniform grid."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise GridMismatchError(f"grid sizes differ: {a.size} vs {b.size}")
    return math.sqrt(float(np.mean((a - b) ** 2)))


def w2(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """Quadratic Wasserstein distance between two atomic measures."""
    return l2_distance(pseudo_inverse(mu), pseudo_inverse(nu))


def product_w2(pair1: MeasurePair, pair2: MeasurePair) -> float:
    """sqrt(W2(rho1, rho2)^2 + W2(eta1, eta2)^2)"""
    d_rho = w2(pair1[0], pair2[0])
    d_eta = w2(pair1[1], pair2[1])
    return math.sqrt(d_rho * d_rho + d_eta * d_eta)


def project_cone(values: Sequence[float], weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Weighted least-squares projection onto nondecreasing sequences (pool adjacent violators).

    Blocks are pooled left to right; every cell of a block receives the same
    float, so exact ties survive for cluster detection with tol = 0.
    """
    y = np.asarray(values, dtype=float).reshape(-1)
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.size != y.size:
            raise InputError(f"values and weights differ in length: {y.size} vs {w.size}")
        if np.any(w <= 0):
            raise InputError("weights must be positive")
    if not np.all(np.isfinite(y)):
        raise InputError("values must be finite")
    if y.size < 2 or np.all(np.diff(y) >= 0):
        return y.copy()

    block_sum = []
    block_weight = []
    block_value = []
    block_size = []
    for yi, wi in zip(y.tolist(), w.tolist()):
        total, weight, size, value = yi * wi, wi, 1, yi
        while block_value and block_value[-1] > value:
            total += block_sum.pop()
            weight += block_weight.pop()
            size += block_size.pop()
            block_value.pop()
            value = total / weight
        block_sum.append(total)
        block_weight.append(weight)
        block_size.append(size)
        block_value.append(value)

    return np.repeat(np.asarray(block_value), block_size)


def clusters(X: PseudoInverse, tol: float = 0.0) -> ClusterPartition:
    """Maximal runs of consecutive cells whose neighbouring values differ by <= tol."""
    if tol < 0:
        raise InputError(f"cluster tolerance must be >= 0, got {tol}")
    breaks = np.flatnonzero(np.diff(X.values) > tol) + 1
    starts = np.concatenate(([0], breaks))
    lengths = np.diff(np.concatenate((starts, [X.n_cells])))
    return ClusterPartition(starts, lengths, X.widths)


def block_average(partition: ClusterPartition, values: np.ndarray) -> np.ndarray:
    """Width-weighted mean on every run; constant runs are returned bit for bit."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size != partition.n_cells:
        raise GridMismatchError(
            f"function has {values.size} cells, partition has {partition.n_cells}"
        )
    if partition.n_blocks == partition.n_cells:
        return values.copy()
    starts = partition.starts
    widths = partition.widths
    means = np.add.reduceat(widths * values, starts) / np.add.reduceat(widths, starts)
    low = np.minimum.reduceat(values, starts)
    high = np.maximum.reduceat(values, starts)
    means = np.where(low == high, low, means)
    return np.repeat(means, partition.lengths)


def project_blocks(partition: ClusterPartition, U: GridFunction) -> GridFunction:
    """Orthogonal projection onto functions constant on every cluster."""
    return GridFunction(block_average(partition, U.values))

# tests/test_services/test_transport_service.py
import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from app.core.errors import GridMismatchError, InputError
from app.models.measure import AtomicMeasure, ClusterPartition, GridFunction, PseudoInverse
from app.services import transport_service


def _lp_w2(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """Brute-force W2 over all couplings (small supports only)."""
    n, m = mu.n_atoms, nu.n_atoms
    cost = np.subtract.outer(mu.positions, nu.positions) ** 2
    a_eq = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
    b_eq = np.concatenate((mu.masses, nu.masses))
    result = linprog(cost.ravel(), A_eq=np.array(a_eq), b_eq=b_eq, bounds=(0, None), method="highs")
    assert result.success
    return math.sqrt(max(result.fun, 0.0))


def _brute_isotonic(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Best monotone block-mean candidate over every contiguous partition."""
    n = y.size
    best, best_cost = None, math.inf
    for cuts in itertools.product([False, True], repeat=n - 1):
        bounds = [0] + [i + 1 for i, cut in enumerate(cuts) if cut] + [n]
        candidate = np.empty(n)
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            candidate[lo:hi] = np.sum(w[lo:hi] * y[lo:hi]) / np.sum(w[lo:hi])
        if np.any(np.diff(candidate) < -1e-12):
            continue
        cost = float(np.sum(w * (candidate - y) ** 2))
        if cost < best_cost:
            best, best_cost = candidate, cost
    return best


def _sorted_matching_cost(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """Squared W2 of the monotone (north-west corner) coupling of sorted atoms."""
    a, b = mu.masses.copy(), nu.masses.copy()
    i = j = 0
    cost = 0.0
    while i < a.size and j < b.size:
        moved = min(a[i], b[j])
        cost += moved * (mu.positions[i] - nu.positions[j]) ** 2
        a[i] -= moved
        b[j] -= moved
        if a[i] <= 0.0:
            i += 1
        else:
            j += 1
    return cost


# =======================
# Pseudo-inverses and measures
# =======================

def test_pseudo_inverse_of_dirac():
    X = transport_service.pseudo_inverse(AtomicMeasure.dirac(0.0))
    np.testing.assert_array_equal(X.breakpoints, [0.0, 1.0])
    np.testing.assert_array_equal(X.evaluate([0.1, 0.5, 0.99]), [0.0, 0.0, 0.0])


def test_pseudo_inverse_breakpoints_at_cumulative_mass():
    mu = AtomicMeasure.from_atoms([(2.0, 0.75), (-1.0, 0.25)])
    X = transport_service.pseudo_inverse(mu)
    np.testing.assert_allclose(X.breakpoints, [0.0, 0.25, 1.0])
    np.testing.assert_array_equal(X.values, [-1.0, 2.0])
    # push-forward identity for zeta(x) = x and x^2
    assert float(np.sum(X.widths * X.values)) == pytest.approx(-0.25 + 1.5)
    assert float(np.sum(X.widths * X.values ** 2)) == pytest.approx(0.25 + 3.0)


def test_to_measure_merges_equal_cells():
    mu = transport_service.to_measure(PseudoInverse.uniform([0.0, 0.0, 1.0, 1.0]))
    np.testing.assert_array_equal(mu.positions, [0.0, 1.0])
    np.testing.assert_allclose(mu.masses, [0.5, 0.5])

    constant = transport_service.to_measure(PseudoInverse.uniform([3.0, 3.0, 3.0]))
    assert constant.n_atoms == 1
    assert constant.positions[0] == 3.0


def test_measure_round_trip():
    mu = AtomicMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    back = transport_service.to_measure(transport_service.pseudo_inverse(mu))
    np.testing.assert_array_equal(back.positions, mu.positions)
    np.testing.assert_allclose(back.masses, mu.masses)


def test_measure_validation():
    with pytest.raises(InputError):
        AtomicMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
    with pytest.raises(InputError):
        AtomicMeasure(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    with pytest.raises(InputError):
        PseudoInverse.uniform([1.0, 0.0])


# =======================
# Distances
# =======================

def test_w2_two_atoms():
    mu = AtomicMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    nu = AtomicMeasure(np.array([0.0, 2.0]), np.array([0.5, 0.5]))
    assert transport_service.w2(mu, nu) == pytest.approx(math.sqrt(0.5))


def test_w2_is_symmetric_and_vanishes_on_identical():
    mu = AtomicMeasure(np.array([-1.0, 0.5, 2.0]), np.array([0.2, 0.3, 0.5]))
    nu = AtomicMeasure(np.array([0.0, 1.0]), np.array([0.6, 0.4]))
    assert transport_service.w2(mu, mu) == 0.0
    assert transport_service.w2(mu, nu) == pytest.approx(transport_service.w2(nu, mu))


@pytest.mark.parametrize("n_atoms", [1, 2, 3, 4])
def test_w2_matches_linear_program(rng, n_atoms):
    for _ in range(5):
        mu = AtomicMeasure.from_atoms(zip(rng.normal(size=n_atoms), rng.dirichlet(np.ones(n_atoms))))
        nu = AtomicMeasure.from_atoms(zip(rng.normal(size=n_atoms), rng.dirichlet(np.ones(n_atoms))))
        assert transport_service.w2(mu, nu) == pytest.approx(_lp_w2(mu, nu), abs=1e-7)


def test_w2_matches_sorted_matching(rng):
    for _ in range(200):
        n, m = rng.integers(1, 65, size=2)
        mu = AtomicMeasure.from_atoms(zip(rng.normal(size=n), rng.dirichlet(np.ones(n))))
        nu = AtomicMeasure.from_atoms(zip(rng.normal(size=m), rng.dirichlet(np.ones(m))))
        assert abs(transport_service.w2(mu, nu) ** 2 - _sorted_matching_cost(mu, nu)) <= 1e-10


def test_product_w2():
    d0, d1 = AtomicMeasure.dirac(0.0), AtomicMeasure.dirac(1.0)
    assert transport_service.product_w2((d0, d0), (d0, d0)) == 0.0
    assert transport_service.product_w2((d0, d0), (d1, d0)) == pytest.approx(1.0)
    far = (AtomicMeasure.dirac(3.0), AtomicMeasure.dirac(4.0))
    assert transport_service.product_w2((d0, d0), far) == pytest.approx(5.0)


def test_grid_distance_is_isometry(monotone):
    a, b = monotone(12), monotone(12)
    direct = transport_service.grid_distance(a, b)
    via_measures = transport_service.w2(
        transport_service.to_measure(PseudoInverse.uniform(a)),
        transport_service.to_measure(PseudoInverse.uniform(b)),
    )
    assert direct == pytest.approx(via_measures, abs=1e-12)


def test_grid_distance_rejects_mismatch():
    with pytest.raises(GridMismatchError):
        transport_service.grid_distance(np.zeros(3), np.zeros(4))


# =======================
# Cone projection
# =======================

def test_project_cone_keeps_monotone_input(monotone):
    values = monotone(9)
    np.testing.assert_array_equal(transport_service.project_cone(values), values)


def test_project_cone_examples():
    np.testing.assert_allclose(transport_service.project_cone([2.0, 1.0]), [1.5, 1.5])
    np.testing.assert_allclose(transport_service.project_cone([3.0, 1.0], [1.0, 3.0]), [1.5, 1.5])
    merged = transport_service.project_cone([0.5, 0.05])
    assert merged[0] == merged[1] == pytest.approx(0.275)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_project_cone_matches_brute_force(rng, n):
    for _ in range(20):
        y = rng.normal(size=n)
        w = rng.uniform(0.1, 2.0, size=n)
        np.testing.assert_allclose(transport_service.project_cone(y, w), _brute_isotonic(y, w), atol=1e-10)


def test_project_cone_is_optimal(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        y = rng.normal(size=n)
        w = rng.uniform(0.1, 2.0, size=n)
        projected = transport_service.project_cone(y, w)
        oracle = _brute_isotonic(y, w)
        cost = float(np.sum(w * (projected - y) ** 2))
        assert cost <= float(np.sum(w * (oracle - y) ** 2)) + 1e-9

        # <y - Py, g - Py>_w <= 0 for every monotone g
        competitors = np.sort(rng.normal(scale=2.0, size=(1000, n)), axis=1)
        inner = (competitors - projected) @ (w * (y - projected))
        assert inner.max() <= 1e-12


def test_project_cone_is_idempotent_and_monotone(rng):
    y = rng.normal(size=50)
    once = transport_service.project_cone(y)
    assert np.all(np.diff(once) >= 0)
    np.testing.assert_array_equal(transport_service.project_cone(once), once)
    # mean is preserved
    assert once.mean() == pytest.approx(y.mean())


def test_project_cone_input_errors():
    with pytest.raises(InputError):
        transport_service.project_cone([1.0, 0.0], [1.0])
    with pytest.raises(InputError):
        transport_service.project_cone([1.0, 0.0], [1.0, 0.0])
    with pytest.raises(InputError):
        transport_service.project_cone([np.inf, 0.0])


# =======================
# Clusters and block projection
# =======================

def test_clusters():
    singletons = transport_service.clusters(PseudoInverse.uniform([0.0, 1.0, 2.0]))
    assert singletons.n_blocks == 3
    assert singletons.clusters() == []

    exact = transport_service.clusters(PseudoInverse.uniform([0.0, 0.0, 1.0]))
    assert exact.runs() == [(0, 1), (2,)]

    loose = transport_service.clusters(PseudoInverse.uniform([0.0, 1e-9, 1.0]), tol=1e-8)
    assert loose.runs() == [(0, 1), (2,)]

    with pytest.raises(InputError):
        transport_service.clusters(PseudoInverse.uniform([0.0]), tol=-1.0)


def test_block_average_examples():
    widths = np.full(4, 0.25)
    singletons = ClusterPartition.singletons(widths)
    U = np.array([4.0, 0.0, 7.0, -1.0])
    np.testing.assert_array_equal(transport_service.block_average(singletons, U), U)

    partition = ClusterPartition(np.array([0, 2, 3]), np.array([2, 1, 1]), widths)
    np.testing.assert_allclose(transport_service.block_average(partition, U), [2.0, 2.0, 7.0, -1.0])

    whole = ClusterPartition(np.array([0]), np.array([2]), np.full(2, 0.5))
    projected = transport_service.project_blocks(whole, GridFunction(np.array([0.0, 2.0])))
    np.testing.assert_allclose(projected.values, [1.0, 1.0])


def test_block_average_is_idempotent_projection(rng):
    X = PseudoInverse.uniform(np.repeat(np.sort(rng.normal(size=6)), [1, 3, 2, 1, 4, 1]))
    partition = transport_service.clusters(X)
    U = rng.normal(size=X.n_cells)
    once = transport_service.block_average(partition, U)
    np.testing.assert_array_equal(transport_service.block_average(partition, once), once)
    # orthogonality: residual is orthogonal to block-constant functions
    residual = U - once
    for run in partition.runs():
        assert abs(residual[list(run)].sum()) < 1e-12


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 4.0])
def test_project_blocks_contracts_convex_costs(rng, p):
    X = PseudoInverse.uniform(np.repeat(np.sort(rng.normal(size=5)), [3, 1, 4, 2, 2]))
    partition = transport_service.clusters(X)
    widths = partition.widths
    for _ in range(50):
        U = GridFunction(rng.normal(size=X.n_cells))
        V = GridFunction(rng.normal(size=X.n_cells))
        PU = transport_service.project_blocks(partition, U)
        PV = transport_service.project_blocks(partition, V)
        lhs = float(np.sum(widths * np.abs(PU.values - PV.values) ** p))
        rhs = float(np.sum(widths * np.abs(U.values - V.values) ** p))
        assert lhs <= rhs + 1e-12


def test_block_average_grid_mismatch():
    partition = ClusterPartition.singletons(np.full(3, 1 / 3))
    with pytest.raises(GridMismatchError):
        transport_service.block_average(partition, np.zeros(4))

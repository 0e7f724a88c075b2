# tests/test_services/test_lagrangian_service.py
import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.errors import (
    BlowUpError,
    ConfigError,
    ConvergenceError,
    GridMismatchError,
    OrderingError,
    PreconditionError,
)
from app.models.state import LagrangianState
from app.schemas.config import InitialLayout, SolverKind
from app.schemas.potential import PotentialSet, PotentialSpec
from app.services import lagrangian_service, potential_service
from app.services.lagrangian_service import LagrangianSimulator


def _state(X, Y=None, V=None, W=None, P=None, Q=None, epsilon=0.0, time=0.0) -> LagrangianState:
    X = np.asarray(X, dtype=float)
    Y = np.zeros_like(X) if Y is None else np.asarray(Y, dtype=float)
    V = np.zeros_like(X) if V is None else np.asarray(V, dtype=float)
    W = np.zeros_like(X) if W is None else np.asarray(W, dtype=float)
    P = X + epsilon * V if P is None else np.asarray(P, dtype=float)
    Q = Y + epsilon * W if Q is None else np.asarray(Q, dtype=float)
    return LagrangianState(X=X, Y=Y, V=V, W=W, P=P, Q=Q, time=time, epsilon=epsilon)


NEWTONIAN_ONLY = PotentialSet(k_rho=PotentialSpec.newtonian(), k_eta=PotentialSpec.newtonian())


# =======================
# Force operators
# =======================

def test_forces_vanish_on_concentrated_state(gaussian_potentials):
    forces = lagrangian_service.force_FG(np.full(5, 0.3), np.full(5, 0.3), gaussian_potentials)
    np.testing.assert_array_equal(forces.F, np.zeros(5))
    np.testing.assert_array_equal(forces.G, np.zeros(5))


def test_newtonian_force_on_two_cells():
    potentials = PotentialSet(k_rho=PotentialSpec.newtonian())
    forces = lagrangian_service.force_FG(np.array([0.0, 1.0]), np.zeros(2), potentials)
    np.testing.assert_allclose(forces.F, [0.5, -0.5])
    np.testing.assert_array_equal(forces.G, [0.0, 0.0])


def test_force_includes_external_well():
    potentials = PotentialSet(a_rho=PotentialSpec.well(1.0, center=0.5))
    forces = lagrangian_service.force_FG(np.array([1.0]), np.array([0.0]), potentials)
    assert forces.F[0] == pytest.approx(-1.0)


def test_force_grid_mismatch(zero_potentials):
    with pytest.raises(GridMismatchError):
        lagrangian_service.force_FG(np.zeros(3), np.zeros(4), zero_potentials)


def test_linearized_newtonian_force_at_origin(newtonian_potentials):
    forces = lagrangian_service.force_newtonian(np.zeros(2), np.zeros(2), newtonian_potentials)
    np.testing.assert_allclose(forces.F, [-0.5, 0.5])
    np.testing.assert_allclose(forces.G, [-0.5, 0.5])

    m = lagrangian_service.midpoints(8)
    forces = lagrangian_service.force_newtonian(np.zeros(8), np.zeros(8), newtonian_potentials)
    np.testing.assert_allclose(forces.F, 2 * m - 1)


def test_linearized_force_matches_sign_sums(monotone):
    X = monotone(16)
    assert np.all(np.diff(X) > 0)
    linear = lagrangian_service.force_newtonian(X, X, NEWTONIAN_ONLY)
    direct = lagrangian_service.force_FG(X, X, NEWTONIAN_ONLY)
    np.testing.assert_allclose(linear.F, -direct.F, atol=1e-12)
    np.testing.assert_allclose(linear.G, -direct.G, atol=1e-12)


def test_newtonian_force_preconditions(gaussian_potentials):
    asymmetric = PotentialSet(
        k_rho=PotentialSpec.newtonian(),
        k_eta=PotentialSpec.newtonian(),
        h_rho=PotentialSpec.gaussian(-1.0),
    )
    with pytest.raises(ConfigError):
        lagrangian_service.force_newtonian(np.zeros(2), np.zeros(2), asymmetric)
    with pytest.raises(ConfigError):
        lagrangian_service.force_newtonian(np.zeros(2), np.zeros(2), gaussian_potentials)


def test_force_lipschitz_bound(rng, gaussian_potentials):
    potentials = gaussian_potentials.model_copy(update={"a_rho": PotentialSpec.well(0.5)})
    constant = lagrangian_service.force_lipschitz_constant(potentials, radius=3.0)
    for _ in range(10):
        X, Xt = np.sort(rng.uniform(-1, 1, 12)), np.sort(rng.uniform(-1, 1, 12))
        Y, Yt = np.sort(rng.uniform(-1, 1, 12)), np.sort(rng.uniform(-1, 1, 12))
        a = lagrangian_service.force_FG(X, Y, potentials)
        b = lagrangian_service.force_FG(Xt, Yt, potentials)
        lhs = np.mean((a.F - b.F) ** 2) + np.mean((a.G - b.G) ** 2)
        rhs = constant * (np.mean((X - Xt) ** 2) + np.mean((Y - Yt) ** 2))
        assert lhs <= rhs + 1e-14


def test_operator_bound_uses_linear_growth_constants(rng, attractive_potentials):
    c_sl = sum(
        potential_service.validate(spec).constants["C_SL"]
        for spec in (attractive_potentials.k_rho, attractive_potentials.k_eta,
                     attractive_potentials.h_rho, attractive_potentials.h_eta)
    )
    for scale in (0.5, 5.0, 50.0):
        X = np.sort(rng.uniform(-scale, scale, 20))
        Y = np.sort(rng.uniform(-scale, scale, 20))
        assert lagrangian_service.operator_bound(X, Y, attractive_potentials) <= 2.0 * c_sl


def test_forces_are_energy_gradient(rng, gaussian_potentials):
    potentials = gaussian_potentials.model_copy(
        update={"a_rho": PotentialSpec.well(1.0), "a_eta": PotentialSpec.well(0.5, center=0.2)}
    )
    n, h = 8, 1e-6
    X = np.linspace(-1.0, 1.0, n) + rng.uniform(-0.05, 0.05, n)
    Y = np.linspace(-0.5, 1.5, n)
    forces = lagrangian_service.force_FG(X, Y, potentials)
    for i in range(n):
        up, down = X.copy(), X.copy()
        up[i] += h
        down[i] -= h
        e_up = lagrangian_service.energy_functional(_state(up, Y), potentials)
        e_down = lagrangian_service.energy_functional(_state(down, Y), potentials)
        gradient = (e_up - e_down) / (2 * h)
        assert forces.F[i] == pytest.approx(-n * gradient, rel=1e-5, abs=1e-7)


# =======================
# Energies
# =======================

def test_self_energy_linear_examples():
    assert lagrangian_service.self_energy_linear(np.full(7, 3.0)) == pytest.approx(0.0, abs=1e-15)
    assert lagrangian_service.self_energy_linear(np.array([0.0, 1.0])) == pytest.approx(0.25)
    m = lagrangian_service.midpoints(256)
    assert lagrangian_service.self_energy_linear(m) == pytest.approx(1.0 / 6.0, abs=1e-4)


def test_self_energy_linear_matches_double_integral(monotone):
    X = monotone(40, -3.0, 2.0)
    brute = 0.5 * float(np.mean(np.abs(np.subtract.outer(X, X))))
    assert abs(lagrangian_service.self_energy_linear(X) - brute) <= 1e-12


def test_self_energy_sign_estimate(monotone):
    for _ in range(10):
        X, Y = monotone(30, -5.0, 5.0), monotone(30, -5.0, 5.0)
        total = lagrangian_service.self_energy_linear(X) + lagrangian_service.self_energy_linear(Y)
        assert total >= -1e-12


def test_self_energy_requires_monotone():
    with pytest.raises(PreconditionError):
        lagrangian_service.self_energy_linear(np.array([1.0, 0.0]))


def test_energy_functional_examples(zero_potentials):
    assert lagrangian_service.energy_functional(_state(np.zeros(4)), zero_potentials) == 0.0
    assert lagrangian_service.energy_functional(_state([0.0, 1.0]), NEWTONIAN_ONLY) == pytest.approx(0.25)
    moving = _state(np.zeros(4), V=np.full(4, 2.0))
    assert lagrangian_service.energy_functional(moving, zero_potentials) == pytest.approx(2.0)
    assert lagrangian_service.energy_functional(moving, zero_potentials, inertia=0.0) == 0.0


def test_energy_functional_asymmetric_cross_is_undefined():
    potentials = PotentialSet(h_rho=PotentialSpec.gaussian(-1.0))
    assert lagrangian_service.energy_functional(_state(np.zeros(2)), potentials) is None


# =======================
# Second-order step
# =======================

def test_second_order_stationary(monotone, zero_potentials):
    X = monotone(10)
    state = _state(X, X.copy(), epsilon=0.5)
    for _ in range(5):
        state = lagrangian_service.step_second_order(state, 1e-2, zero_potentials)
    np.testing.assert_array_equal(state.X, X)
    np.testing.assert_array_equal(state.V, np.zeros(10))
    assert state.time == pytest.approx(5e-2)


def test_second_order_merges_crossing_cells(zero_potentials):
    state = _state([0.0, 0.1], P=[1.0, 0.0], epsilon=1.0)
    stepped = lagrangian_service.step_second_order(state, 1.0, zero_potentials)
    assert stepped.X[0] == stepped.X[1] == pytest.approx(0.275)
    assert stepped.V[0] == stepped.V[1] == pytest.approx(0.225)
    np.testing.assert_array_equal(stepped.P, [1.0, 0.0])


def test_second_order_large_inertia_moves_slowly(zero_potentials):
    state = _state([0.0, 1.0], P=[1.0, 2.0], epsilon=100.0)
    stepped = lagrangian_service.step_second_order(state, 1e-2, zero_potentials)
    np.testing.assert_allclose(stepped.X - state.X, 1e-2 / 100.0, rtol=1e-3)


def test_second_order_needs_positive_epsilon(zero_potentials):
    with pytest.raises(PreconditionError):
        lagrangian_service.step_second_order(_state([0.0, 1.0]), 1e-2, zero_potentials)


def test_second_order_blow_up():
    huge = PotentialSet(a_rho=PotentialSpec.well(1e308))
    state = _state([1e10, 2e10], epsilon=1.0)
    with pytest.raises(BlowUpError):
        lagrangian_service.step_second_order(state, 1.0, huge)


def test_velocity_from_auxiliary(zero_potentials, gaussian_potentials, monotone):
    state = _state([0.0, 0.1], P=[1.0, 0.0], epsilon=1.0)
    stepped = lagrangian_service.step_second_order(state, 1.0, zero_potentials)
    V, W = lagrangian_service.velocity_from_auxiliary(stepped)
    np.testing.assert_allclose(V, stepped.V)
    np.testing.assert_allclose(W, stepped.W)

    smooth = _state(monotone(12), monotone(12), V=np.linspace(1, -1, 12), epsilon=0.2)
    for _ in range(20):
        smooth = lagrangian_service.step_second_order(smooth, 1e-2, gaussian_potentials)
    V, W = lagrangian_service.velocity_from_auxiliary(smooth)
    np.testing.assert_allclose(V, smooth.V, atol=1e-10)
    np.testing.assert_allclose(W, smooth.W, atol=1e-10)

    with pytest.raises(PreconditionError):
        lagrangian_service.velocity_from_auxiliary(_state([0.0, 1.0]))


# =======================
# First-order step
# =======================

def test_first_order_identity_without_forces(monotone, zero_potentials):
    X = monotone(6)
    stepped = lagrangian_service.step_first_order(_state(X), 1e-2, zero_potentials)
    np.testing.assert_array_equal(stepped.X, X)
    np.testing.assert_array_equal(stepped.P, stepped.X)


def test_first_order_newtonian_pair_moves_inward_and_sticks():
    potentials = PotentialSet(k_rho=PotentialSpec.newtonian())
    state = _state([-0.5, 0.5])
    stepped = lagrangian_service.step_first_order(state, 0.01, potentials)
    np.testing.assert_allclose(stepped.X, [-0.495, 0.495])

    state = _state([-0.01, 0.01])
    history = []
    for _ in range(5):
        state = lagrangian_service.step_first_order(state, 0.01, potentials)
        history.append(state.X.copy())
    np.testing.assert_array_equal(history[1], [0.0, 0.0])
    for X in history[1:]:
        assert X[0] == X[1]


# =======================
# Newtonian step
# =======================

def test_newtonian_stationary_point(newtonian_potentials):
    state = _state(np.zeros(64))
    for _ in range(10):
        state = lagrangian_service.step_newtonian(state, 1e-2, 1.0, newtonian_potentials)
    np.testing.assert_array_equal(state.X, np.zeros(64))
    np.testing.assert_array_equal(state.V, np.zeros(64))


def test_single_cluster_behaves_as_damped_particle():
    potentials = PotentialSet(
        k_rho=PotentialSpec.newtonian(),
        k_eta=PotentialSpec.newtonian(),
        a_rho=PotentialSpec.well(1.0),
        a_eta=PotentialSpec.well(1.0),
    )
    c, dt, sigma = 0.5, 1e-2, 2.0
    state = _state(np.full(64, c), np.full(64, -c))
    stepped = lagrangian_service.step_newtonian(state, dt, sigma, potentials)
    gain = -math.expm1(-sigma * dt) / sigma
    expected_v = -gain * 2 * c
    np.testing.assert_allclose(stepped.V, expected_v, rtol=1e-12)
    np.testing.assert_allclose(stepped.X, c + dt * expected_v, rtol=1e-12)
    np.testing.assert_allclose(stepped.W, -expected_v, rtol=1e-12)
    assert np.all(stepped.X == stepped.X[0])


def test_newtonian_step_rejects_bad_sigma(newtonian_potentials):
    with pytest.raises(ConfigError):
        lagrangian_service.step_newtonian(_state(np.zeros(2)), 1e-2, math.inf, newtonian_potentials)


@pytest.mark.slow
def test_newtonian_energy_dissipates(make_config, newtonian_potentials):
    config = make_config(
        solver=SolverKind.LAGRANGIAN_NEWTONIAN,
        n_rho=None,
        n_eta=None,
        n_cells=64,
        sigma=1.0,
        horizon=5.0,
        dt=1e-3,
        output_stride=1,
        seed=0,
        initial_layout=InitialLayout.RANDOM_SORTED,
        position_range=(-1.0, 1.0),
        potentials=newtonian_potentials,
    )
    run = lagrangian_service.simulate(config)
    energies = [record.energy for record in run.diagnostics]
    assert len(energies) == 5001
    assert np.max(np.diff(energies)) <= 1e-8
    assert energies[-1] < energies[0]


# =======================
# Picard iteration
# =======================

def _picard_config(make_config, **overrides):
    data = dict(
        solver=SolverKind.PICARD,
        n_rho=None,
        n_eta=None,
        n_cells=10,
        sigma=None,
        epsilon=0.25,
        dt=1e-2,
        horizon=0.1,
        output_stride=1,
    )
    data.update(overrides)
    return make_config(**data)


def test_picard_free_flow_converges_in_one_iteration(make_config):
    config = _picard_config(make_config)
    result = lagrangian_service.picard_solve(config)
    assert result.iterations == [1]
    assert result.X.shape == (11, 10)
    np.testing.assert_allclose(result.times[-1], 0.1)

    direct = lagrangian_service.simulate(config.model_copy(update={"solver": SolverKind.LAGRANGIAN_SECOND}))
    np.testing.assert_allclose(result.X[-1], direct.final.X, atol=1e-12)
    np.testing.assert_allclose(result.Y[-1], direct.final.Y, atol=1e-12)


def test_picard_agrees_with_stepping(make_config, gaussian_potentials):
    config = _picard_config(make_config, epsilon=0.5, horizon=0.2, potentials=gaussian_potentials)
    result = lagrangian_service.picard_solve(config)
    direct = lagrangian_service.simulate(config.model_copy(update={"solver": SolverKind.LAGRANGIAN_SECOND}))
    for k, snapshot in enumerate(direct.snapshots):
        np.testing.assert_allclose(result.X[k], snapshot.X, atol=1e-6)
        np.testing.assert_allclose(result.Y[k], snapshot.Y, atol=1e-6)
    for window in range(result.n_windows):
        assert all(ratio < 1.0 for ratio in result.contraction_ratios(window))


def test_picard_reports_non_convergence(make_config):
    config = _picard_config(make_config)
    with pytest.raises(ConvergenceError) as info:
        lagrangian_service.picard_solve(config, max_iters=1)
    assert info.value.last_ratio is None


def test_picard_needs_positive_epsilon(make_config):
    config = _picard_config(make_config)
    with pytest.raises(PreconditionError):
        lagrangian_service.picard_solve(config, initial=_state(np.linspace(0, 1, 10)))


def test_picard_config_rejects_kinked_kernels(make_config, newtonian_potentials):
    with pytest.raises(ValidationError, match="k_rho, k_eta"):
        _picard_config(make_config, potentials=newtonian_potentials)
    with pytest.raises(ValidationError, match="h_rho"):
        _picard_config(make_config, potentials=PotentialSet(h_rho=PotentialSpec.gaussian(-1.0, 1.5)))


def test_picard_solve_rejects_kinked_kernels(make_config, newtonian_potentials):
    config = _picard_config(make_config, solver=SolverKind.LAGRANGIAN_SECOND, potentials=newtonian_potentials)
    with pytest.raises(PreconditionError, match="smooth"):
        lagrangian_service.picard_solve(config)


def test_picard_solve_rejects_super_linear_gradient(make_config):
    config = _picard_config(make_config, potentials=PotentialSet(k_rho=PotentialSpec.power(1.0, 3.0)))
    with pytest.raises(PreconditionError, match="k_rho"):
        lagrangian_service.picard_solve(config)


def test_picard_positions_resolve_against_current_momenta(make_config, gaussian_potentials):
    config = _picard_config(make_config, epsilon=0.5, horizon=0.2, potentials=gaussian_potentials)
    result = lagrangian_service.picard_solve(config)
    for k in range(result.X.shape[0] - 1):
        np.testing.assert_allclose(
            result.X[k + 1], lagrangian_service.resolve(result.P[k + 1], result.X[k], 0.5, config.dt), atol=1e-14
        )
        np.testing.assert_allclose(
            result.Y[k + 1], lagrangian_service.resolve(result.Q[k + 1], result.Y[k], 0.5, config.dt), atol=1e-14
        )


def test_picard_simulator_run(make_config, gaussian_potentials):
    config = _picard_config(make_config, potentials=gaussian_potentials, output_stride=5)
    run = lagrangian_service.simulate(config)
    np.testing.assert_allclose(run.times, [0.0, 0.05, 0.1])


# =======================
# Simulator
# =======================

def test_simulator_rejects_eulerian_config(make_config):
    with pytest.raises(ConfigError):
        LagrangianSimulator(make_config())


def test_second_order_run_without_dynamics_is_constant(make_config):
    config = make_config(
        solver=SolverKind.LAGRANGIAN_SECOND,
        n_rho=None,
        n_eta=None,
        n_cells=16,
        velocity_range=(0.0, 0.0),
    )
    run = lagrangian_service.simulate(config)
    np.testing.assert_array_equal(run.final.X, run.snapshots[0].X)
    assert all(record.w2_reference == 0.0 for record in run.diagnostics)
    assert all(record.merge_events == 0 for record in run.diagnostics)
    assert run.diagnostics[-1].clusters_rho == 16


def test_initial_state_sets_auxiliary_variables(make_config):
    config = make_config(solver=SolverKind.LAGRANGIAN_SECOND, n_rho=None, n_eta=None, n_cells=8, sigma=2.0)
    state = LagrangianSimulator(config).initial_state()
    assert state.epsilon == 0.25
    np.testing.assert_allclose(state.P, state.X + 0.25 * state.V)
    np.testing.assert_allclose(state.Q, state.Y + 0.25 * state.W)


def test_check_rejects_unordered_state(make_config):
    config = make_config(solver=SolverKind.LAGRANGIAN_FIRST, n_rho=None, n_eta=None, n_cells=2)
    simulator = LagrangianSimulator(config)
    with pytest.raises(OrderingError):
        simulator.check(_state([1.0, 0.0]))
    with pytest.raises(OrderingError):
        simulator.check(_state([0.0, 0.0], V=[1.0, -1.0]))


def test_first_order_run_counts_clusters(make_config):
    config = make_config(
        solver=SolverKind.LAGRANGIAN_FIRST,
        n_rho=None,
        n_eta=None,
        n_cells=8,
        horizon=2.0,
        dt=1e-2,
        potentials=NEWTONIAN_ONLY,
    )
    run = lagrangian_service.simulate(config)
    final = run.diagnostics[-1]
    assert final.clusters_rho == 1
    assert final.clusters_eta == 1
    assert final.merge_events == 14

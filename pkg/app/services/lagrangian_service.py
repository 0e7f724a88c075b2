"""
Lagrangian solvers on a uniform grid of (0, 1).

Both species are carried by their pseudo-inverses X, Y sampled at the cell
midpoints m_i = (i + 1/2) / n. The monotone constraint is enforced by cone
projection (pool adjacent violators) and velocities live on the clusters of
the current positions.
"""

import math
import time as clock
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog

from app.core.errors import (
    BlowUpError,
    ConfigError,
    ConvergenceError,
    GridMismatchError,
    OrderingError,
    PreconditionError,
)
from app.models.measure import GridFunction, PseudoInverse
from app.models.state import ForceSample, LagrangianState
from app.models.trajectory import LagrangianRun, PicardResult
from app.schemas.config import SimConfig, SolverKind
from app.schemas.potential import PotentialSet, PotentialSpec
from app.schemas.run import DiagnosticsRecord
from . import io_service
from .potential_service import derivative_lipschitz, evaluate, evaluate_derivative, interaction_sum, validate
from .transport_service import clusters, grid_distance, project_blocks, project_cone

logger = structlog.get_logger(__name__)


def midpoints(n_cells: int) -> np.ndarray:
    return (np.arange(n_cells) + 0.5) / n_cells


def _grid_pair(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float).reshape(-1)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if X.size != Y.size:
        raise GridMismatchError(f"X has {X.size} cells, Y has {Y.size}")
    return X, Y


def _check_monotone(values: np.ndarray, name: str) -> None:
    if np.any(np.diff(values) < 0):
        raise PreconditionError(f"{name} must be nondecreasing")


# =======================
# Force operators
# =======================

def force_FG(X: np.ndarray, Y: np.ndarray, potentials: PotentialSet) -> ForceSample:
    """Nonlocal forces by midpoint quadrature.

    F_i = -(1/n) sum_k K_rho'(X_i - X_k) - (1/n) sum_k H_rho'(X_i - Y_k), G likewise.
    External wells, when configured, add -A'(X_i).
    """
    X, Y = _grid_pair(X, Y)
    weights = np.full(X.size, 1.0 / X.size)
    F = -interaction_sum(potentials.k_rho, X, X, weights) - interaction_sum(potentials.h_rho, X, Y, weights)
    G = -interaction_sum(potentials.k_eta, Y, Y, weights) - interaction_sum(potentials.h_eta, Y, X, weights)
    if not potentials.a_rho.is_zero:
        F = F - evaluate_derivative(potentials.a_rho, X)
    if not potentials.a_eta.is_zero:
        G = G - evaluate_derivative(potentials.a_eta, Y)
    return ForceSample(F, G)


def force_newtonian(X: np.ndarray, Y: np.ndarray, potentials: PotentialSet) -> ForceSample:
    """Force operators of the projected Newtonian system.

    The self term uses the linear form a (2 m_i - 1) that the Newtonian
    energy takes on the monotone cone. These operators enter the velocity
    equation with a minus sign.
    """
    if not potentials.symmetric_cross:
        raise ConfigError("newtonian forces need h_rho == h_eta", field="potentials.h_eta")
    if not potentials.newtonian_self:
        raise ConfigError("newtonian forces need newtonian k_rho and k_eta", field="potentials.k_rho")
    X, Y = _grid_pair(X, Y)
    m = midpoints(X.size)
    weights = np.full(X.size, 1.0 / X.size)
    F1 = potentials.k_rho.amplitude * (2.0 * m - 1.0) + interaction_sum(potentials.h_rho, X, Y, weights)
    F2 = potentials.k_eta.amplitude * (2.0 * m - 1.0) + interaction_sum(potentials.h_eta, Y, X, weights)
    if not potentials.a_rho.is_zero:
        F1 = F1 + evaluate_derivative(potentials.a_rho, X)
    if not potentials.a_eta.is_zero:
        F2 = F2 + evaluate_derivative(potentials.a_eta, Y)
    return ForceSample(F1, F2)


def force_lipschitz_constant(potentials: PotentialSet, radius: float) -> float:
    """C with ||F - F~||^2 + ||G - G~||^2 <= C (||X - X~||^2 + ||Y - Y~||^2).

    Built from the Lipschitz constants of K', H', A' on [-radius, radius].
    """
    l_k = max(derivative_lipschitz(potentials.k_rho, radius), derivative_lipschitz(potentials.k_eta, radius))
    l_h = max(derivative_lipschitz(potentials.h_rho, radius), derivative_lipschitz(potentials.h_eta, radius))
    l_a = max(derivative_lipschitz(potentials.a_rho, radius), derivative_lipschitz(potentials.a_eta, radius))
    return 3.0 * ((l_k + l_h + l_a) ** 2 + l_k ** 2 + l_h ** 2)


def operator_bound(X: np.ndarray, Y: np.ndarray, potentials: PotentialSet) -> float:
    """||(F, G)|| / (1 + ||X|| + ||Y||) in the grid L2 norm."""
    X, Y = _grid_pair(X, Y)
    forces = force_FG(X, Y, potentials)
    size = math.sqrt(GridFunction(forces.F).norm() ** 2 + GridFunction(forces.G).norm() ** 2)
    return size / (1.0 + GridFunction(X).norm() + GridFunction(Y).norm())


# =======================
# Energies
# =======================

def self_energy_linear(X: np.ndarray) -> float:
    """Midpoint value of int (2m - 1) X(m) dm; equals the Newtonian self energy on the cone."""
    X = np.asarray(X, dtype=float).reshape(-1)
    _check_monotone(X, "X")
    m = midpoints(X.size)
    return float(np.mean((2.0 * m - 1.0) * X))


def _pair_energy(kernel: PotentialSpec, a: np.ndarray, b: np.ndarray) -> float:
    if kernel.is_zero:
        return 0.0
    return float(np.mean(evaluate(kernel, np.subtract.outer(a, b))))


def _self_energy(kernel: PotentialSpec, X: np.ndarray) -> float:
    if kernel.is_zero:
        return 0.0
    if kernel.is_newtonian:
        return kernel.amplitude * self_energy_linear(X)
    return 0.5 * _pair_energy(kernel, X, X)


def energy_functional(
    state: LagrangianState, potentials: PotentialSet, inertia: float = 1.0
) -> Optional[float]:
    """Kinetic + self + cross + external energy of a grid state; None for asymmetric H.

    inertia weights the kinetic part (epsilon for the rescaled system,
    0 for the first-order limit).
    """
    if not potentials.symmetric_cross:
        return None
    X, Y = state.X, state.Y
    _check_monotone(X, "X")
    _check_monotone(Y, "Y")
    energy = 0.5 * inertia * float(np.mean(state.V ** 2) + np.mean(state.W ** 2))
    energy += _self_energy(potentials.k_rho, X) + _self_energy(potentials.k_eta, Y)
    energy += _pair_energy(potentials.h_rho, Y, X)
    if not potentials.a_rho.is_zero:
        energy += float(np.mean(evaluate(potentials.a_rho, X)))
    if not potentials.a_eta.is_zero:
        energy += float(np.mean(evaluate(potentials.a_eta, Y)))
    return energy


# =======================
# Velocities
# =======================

def project_velocity(X: np.ndarray, U: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Block average of U over the clusters of X."""
    partition = clusters(PseudoInverse.uniform(X), tol)
    return project_blocks(partition, GridFunction(U)).values


def velocity_from_auxiliary(state: LagrangianState, tol: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """(V, W) recovered from the auxiliary variables as cluster averages of (P - X) / epsilon."""
    if not (0.0 < state.epsilon < math.inf):
        raise PreconditionError(f"velocity recovery needs 0 < epsilon < inf, got {state.epsilon}")
    V = project_velocity(state.X, (state.P - state.X) / state.epsilon, tol)
    W = project_velocity(state.Y, (state.Q - state.Y) / state.epsilon, tol)
    return V, W


def _check_finite(time: float, **fields: np.ndarray) -> None:
    for name, values in fields.items():
        if not np.all(np.isfinite(values)):
            logger.error("Non-finite grid state", field=name, time=time)
            raise BlowUpError(f"non-finite {name} after step", time=time)


# =======================
# Time stepping
# =======================

def resolve(P_next: np.ndarray, X_prev: np.ndarray, epsilon: float, dt: float) -> np.ndarray:
    """Solve eps (X - X_prev) / dt + X + dI_K(X) ∋ P_next by one cone projection."""
    ratio = epsilon / dt
    return project_cone(X_prev + (P_next - X_prev) / (1.0 + ratio))


def step_second_order(
    state: LagrangianState, dt: float, potentials: PotentialSet, cluster_tol: float = 0.0
) -> LagrangianState:
    """Semi-implicit step of the rescaled second-order system.

    P, Q are advanced explicitly with the forces at the old positions, the
    positions by the exact resolvent of the monotone constraint.
    """
    eps = state.epsilon
    if not (0.0 < eps < math.inf):
        raise PreconditionError(f"second-order step needs 0 < epsilon < inf, got {eps}")
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")

    forces = force_FG(state.X, state.Y, potentials)
    P = state.P + dt * forces.F
    Q = state.Q + dt * forces.G
    time = state.time + dt
    _check_finite(time, P=P, Q=Q)
    X = resolve(P, state.X, eps, dt)
    Y = resolve(Q, state.Y, eps, dt)
    V = project_velocity(X, (X - state.X) / dt, cluster_tol)
    W = project_velocity(Y, (Y - state.Y) / dt, cluster_tol)

    _check_finite(time, V=V, W=W)
    return state.evolve(X=X, Y=Y, V=V, W=W, P=P, Q=Q, time=time)


def step_first_order(
    state: LagrangianState, dt: float, potentials: PotentialSet, cluster_tol: float = 0.0
) -> LagrangianState:
    """Projected explicit Euler step of X' = F, Y' = G."""
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    forces = force_FG(state.X, state.Y, potentials)
    time = state.time + dt
    _check_finite(time, F=forces.F, G=forces.G)
    X = project_cone(state.X + dt * forces.F)
    Y = project_cone(state.Y + dt * forces.G)
    V = project_velocity(X, (X - state.X) / dt, cluster_tol)
    W = project_velocity(Y, (Y - state.Y) / dt, cluster_tol)

    _check_finite(time, V=V, W=W)
    return state.evolve(X=X, Y=Y, V=V, W=W, P=X, Q=Y, time=time)


def step_newtonian(
    state: LagrangianState,
    dt: float,
    sigma: float,
    potentials: PotentialSet,
    cluster_tol: float = 0.0,
) -> LagrangianState:
    """Projected Euler step of X' = V, V' = -P_H(F1) - sigma V (and Y, W with F2).

    Damping is integrated exactly through the factor exp(-sigma dt).
    """
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if not (0.0 <= sigma < math.inf):
        raise ConfigError(f"newtonian step needs finite sigma >= 0, got {sigma}")

    forces = force_newtonian(state.X, state.Y, potentials)
    decay = math.exp(-sigma * dt)
    gain = -math.expm1(-sigma * dt) / sigma if sigma > 0 else dt
    time = state.time + dt
    _check_finite(time, F1=forces.F, F2=forces.G)

    F1 = project_velocity(state.X, forces.F, cluster_tol)
    F2 = project_velocity(state.Y, forces.G, cluster_tol)
    V_half = decay * state.V - gain * F1
    W_half = decay * state.W - gain * F2
    _check_finite(time, V=V_half, W=W_half)

    X = project_cone(state.X + dt * V_half)
    Y = project_cone(state.Y + dt * W_half)
    V = project_velocity(X, V_half, cluster_tol)
    W = project_velocity(Y, W_half, cluster_tol)

    return state.evolve(X=X, Y=Y, V=V, W=W, P=X, Q=Y, time=time)


# =======================
# Picard iteration
# =======================

def _sup_distance(a: List[np.ndarray], b: List[np.ndarray]) -> float:
    """sup over time of the L2 distance of (X, Y, P, Q)."""
    total = sum(np.mean((u - v) ** 2, axis=1) for u, v in zip(a, b))
    return float(np.sqrt(np.max(total)))


def check_picard_potentials(potentials: PotentialSet) -> None:
    """Every non-zero kernel needs a Lipschitz derivative and sub-linear growth of K'."""
    rough = potentials.non_smooth_slots()
    if rough:
        raise PreconditionError(f"picard_solve needs smooth kernels, not: {', '.join(rough)}")
    growing = [
        name for name, spec in potentials.slots().items()
        if not spec.is_zero and not validate(spec).satisfies_SL
    ]
    if growing:
        raise PreconditionError(f"picard_solve needs sub-linear K', not: {', '.join(growing)}")


def _contraction_constant(initial: LagrangianState, potentials: PotentialSet) -> float:
    values = np.concatenate((initial.X, initial.Y))
    radius = max(1.0, 2.0 * float(values.max() - values.min()) + 1.0)
    return max(1.0 / initial.epsilon, math.sqrt(force_lipschitz_constant(potentials, radius)))


def _picard_window(
    start: LagrangianState,
    potentials: PotentialSet,
    dt: float,
    n_steps: int,
    max_iters: int,
    tol: float,
) -> Tuple[List[np.ndarray], int, List[float]]:
    """Fixed point of the trajectory map on one window of n_steps steps."""
    eps = start.epsilon
    shape = (n_steps + 1, start.n_cells)
    current = [np.broadcast_to(field, shape).copy() for field in (start.X, start.Y, start.P, start.Q)]
    distances: List[float] = []

    for iteration in range(1, max_iters + 1):
        X_old, Y_old = current[0], current[1]
        F = np.empty((n_steps, start.n_cells))
        G = np.empty((n_steps, start.n_cells))
        for k in range(n_steps):
            forces = force_FG(X_old[k], Y_old[k], potentials)
            F[k], G[k] = forces.F, forces.G

        P = np.empty(shape)
        Q = np.empty(shape)
        P[0], Q[0] = start.P, start.Q
        P[1:] = start.P + dt * np.cumsum(F, axis=0)
        Q[1:] = start.Q + dt * np.cumsum(G, axis=0)

        X = np.empty(shape)
        Y = np.empty(shape)
        X[0], Y[0] = start.X, start.Y
        for k in range(n_steps):
            X[k + 1] = resolve(P[k + 1], X[k], eps, dt)
            Y[k + 1] = resolve(Q[k + 1], Y[k], eps, dt)

        following = [X, Y, P, Q]
        distance = _sup_distance(following, current)
        distances.append(distance)
        current = following
        logger.debug("Picard iterate", iteration=iteration, distance=distance)
        if not np.isfinite(distance):
            raise BlowUpError("Picard iterate is not finite", time=start.time)
        if distance <= tol:
            return current, iteration - 1, distances

    last_ratio = distances[-1] / distances[-2] if len(distances) > 1 and distances[-2] > 0 else None
    raise ConvergenceError(
        f"Picard iteration did not reach tol={tol} in {max_iters} iterations",
        last_ratio=last_ratio,
    )


def picard_solve(
    config: SimConfig,
    horizon: Optional[float] = None,
    max_iters: Optional[int] = None,
    tol: Optional[float] = None,
    initial: Optional[LagrangianState] = None,
) -> PicardResult:
    """Whole-trajectory fixed-point iteration for the rescaled second-order system.

    The horizon is cut into windows of length at most 1 / (2C), with C the
    larger of 1/epsilon and the force Lipschitz constant, so that each
    window map is a contraction. Iterate n + 1 integrates the forces of
    iterate n into P, Q and resolves the positions step by step against
    those new P, Q.
    """
    horizon = config.horizon if horizon is None else horizon
    max_iters = config.picard_max_iters if max_iters is None else max_iters
    tol = config.picard_tol if tol is None else tol
    dt = config.dt
    check_picard_potentials(config.potentials)
    start = initial if initial is not None else LagrangianSimulator(config).initial_state()
    if not (0.0 < start.epsilon < math.inf):
        raise PreconditionError(f"picard_solve needs 0 < epsilon < inf, got {start.epsilon}")

    total_steps = max(1, int(round(horizon / dt)))
    constant = _contraction_constant(start, config.potentials)
    window_steps = max(1, int(math.floor(0.5 / constant / dt)))
    logger.info(
        "Starting picard solve",
        steps=total_steps,
        window_steps=window_steps,
        contraction_constant=constant,
    )

    trajectory: Dict[str, List[np.ndarray]] = {name: [getattr(start, name)[None, :]] for name in "XYPQ"}
    iterations: List[int] = []
    distances: List[List[float]] = []
    done = 0
    last_ratio: Optional[float] = None
    while done < total_steps:
        steps = min(window_steps, total_steps - done)
        fields, count, window_distances = _picard_window(start, config.potentials, dt, steps, max_iters, tol)
        iterations.append(count)
        distances.append(window_distances)
        if len(window_distances) > 1 and window_distances[-2] > 0:
            last_ratio = window_distances[-1] / window_distances[-2]
        for name, values in zip("XYPQ", fields):
            trajectory[name].append(values[1:])
        done += steps
        X, Y, P, Q = (values[-1] for values in fields)
        start = start.evolve(X=X, Y=Y, P=P, Q=Q, time=done * dt)

    logger.info("Finished picard solve", windows=len(iterations), max_iterations=max(iterations))
    return PicardResult(
        times=np.arange(total_steps + 1) * dt,
        X=np.vstack(trajectory["X"]),
        Y=np.vstack(trajectory["Y"]),
        P=np.vstack(trajectory["P"]),
        Q=np.vstack(trajectory["Q"]),
        iterations=iterations,
        distances=distances,
        last_ratio=last_ratio,
    )


# =======================
# Driver
# =======================

class LagrangianSimulator:
    """Service for fixed-step grid runs"""

    def __init__(self, config: SimConfig):
        if config.solver not in (
            SolverKind.LAGRANGIAN_SECOND,
            SolverKind.LAGRANGIAN_FIRST,
            SolverKind.LAGRANGIAN_NEWTONIAN,
            SolverKind.PICARD,
        ):
            raise ConfigError(f"{config.solver.value} is not a lagrangian solver", field="solver")
        self.config = config
        self.potentials = config.potentials
        self.solver = config.solver
        if self.solver in (SolverKind.LAGRANGIAN_SECOND, SolverKind.PICARD):
            self.epsilon = config.eps
            self.inertia = config.eps
        elif self.solver == SolverKind.LAGRANGIAN_FIRST:
            self.epsilon = 0.0
            self.inertia = 0.0
        else:
            self.epsilon = 0.0
            self.inertia = 1.0
            self.sigma = config.damping

    def initial_state(self) -> LagrangianState:
        data = io_service.build_initial_data(self.config)
        X, Y = data.rho_positions, data.eta_positions
        tol = self.config.cluster_tol
        V = project_velocity(X, data.rho_velocities, tol)
        W = project_velocity(Y, data.eta_velocities, tol)
        if self.epsilon > 0:
            P, Q = X + self.epsilon * V, Y + self.epsilon * W
        else:
            P, Q = X, Y
        return LagrangianState(X=X, Y=Y, V=V, W=W, P=P, Q=Q, time=0.0, epsilon=self.epsilon)

    def step(self, state: LagrangianState) -> LagrangianState:
        dt, tol = self.config.dt, self.config.cluster_tol
        if self.solver == SolverKind.LAGRANGIAN_SECOND:
            return step_second_order(state, dt, self.potentials, tol)
        if self.solver == SolverKind.LAGRANGIAN_FIRST:
            return step_first_order(state, dt, self.potentials, tol)
        return step_newtonian(state, dt, self.sigma, self.potentials, tol)

    def diagnostics(self, state: LagrangianState, reference: LagrangianState) -> DiagnosticsRecord:
        tol = self.config.cluster_tol
        norms = state.norms()
        blocks_x = clusters(state.x_inverse, tol).n_blocks
        blocks_y = clusters(state.y_inverse, tol).n_blocks
        w2 = math.hypot(grid_distance(state.X, reference.X), grid_distance(state.Y, reference.Y))
        return DiagnosticsRecord(
            time=state.time,
            kinetic_energy=0.5 * self.inertia * float(np.mean(state.V ** 2) + np.mean(state.W ** 2)),
            energy=energy_functional(state, self.potentials, self.inertia),
            norm_x=norms["X"],
            norm_y=norms["Y"],
            norm_v=norms["V"],
            norm_w=norms["W"],
            w2_reference=w2,
            # cells absorbed into clusters so far
            merge_events=2 * state.n_cells - blocks_x - blocks_y,
            clusters_rho=blocks_x,
            clusters_eta=blocks_y,
        )

    def check(self, state: LagrangianState) -> None:
        """Monotone positions and velocities constant on clusters."""
        tol = self.config.cluster_tol
        for name, positions, velocities in (("X", state.X, state.V), ("Y", state.Y, state.W)):
            if np.any(np.diff(positions) < 0):
                raise OrderingError(f"{name} is not nondecreasing at t={state.time}")
            if not np.array_equal(project_velocity(positions, velocities, tol), velocities):
                raise OrderingError(f"velocity of {name} is not constant on clusters at t={state.time}")

    def run(self, initial: Optional[LagrangianState] = None) -> LagrangianRun:
        if self.solver == SolverKind.PICARD:
            return self._run_picard(initial)

        config = self.config
        started = clock.perf_counter()
        state = initial if initial is not None else self.initial_state()
        logger.info(
            "Starting lagrangian run",
            solver=self.solver.value,
            n_cells=state.n_cells,
            epsilon=self.epsilon,
            steps=config.n_steps,
        )
        self.check(state)
        reference = state
        run = LagrangianRun(snapshots=[state], diagnostics=[self.diagnostics(state, reference)])

        for step in range(1, config.n_steps + 1):
            state = self.step(state).evolve(time=step * config.dt)
            self.check(state)
            if step % config.output_stride == 0 or step == config.n_steps:
                run.snapshots.append(state)
                run.diagnostics.append(self.diagnostics(state, reference))

        final = run.diagnostics[-1]
        logger.info(
            "Finished lagrangian run",
            solver=self.solver.value,
            clusters_rho=final.clusters_rho,
            clusters_eta=final.clusters_eta,
            elapsed=round(clock.perf_counter() - started, 3),
        )
        return run

    def _run_picard(self, initial: Optional[LagrangianState]) -> LagrangianRun:
        config = self.config
        start = initial if initial is not None else self.initial_state()
        result = picard_solve(config, initial=start)
        dt, tol = config.dt, config.cluster_tol
        run = LagrangianRun()
        for step in range(0, result.X.shape[0]):
            if step and step % config.output_stride and step != result.X.shape[0] - 1:
                continue
            X, Y = result.X[step], result.Y[step]
            if step == 0:
                V, W = start.V, start.W
            else:
                V = project_velocity(X, (X - result.X[step - 1]) / dt, tol)
                W = project_velocity(Y, (Y - result.Y[step - 1]) / dt, tol)
            state = start.evolve(X=X, Y=Y, V=V, W=W, P=result.P[step], Q=result.Q[step], time=step * dt)
            self.check(state)
            run.snapshots.append(state)
            run.diagnostics.append(self.diagnostics(state, run.snapshots[0]))
        return run


def simulate(config: SimConfig, initial: Optional[LagrangianState] = None) -> LagrangianRun:
    return LagrangianSimulator(config).run(initial)

"""
Sticky particle simulator for the damped two-species system.

Fixed-step loop: one Shu-Osher SSP-RK3 step for positions and velocities,
then a post-step merge pass for same-species pairs closer than toll.
"""

import math
import time as clock
from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np
import structlog

from app.core.errors import BlowUpError, ConfigError
from app.models.state import SpeciesState, TwoSpeciesState
from app.models.trajectory import EulerianRun
from app.schemas.config import MergeRule, SimConfig, TimeScale
from app.schemas.potential import PotentialSet
from app.schemas.run import DiagnosticsRecord, MergeEvent, Species
from . import io_service
from .potential_service import evaluate, evaluate_derivative, interaction_sum
from .transport_service import product_w2

logger = structlog.get_logger(__name__)

MOMENTUM_TOL = 1e-12


# =======================
# Forces
# =======================

def species_forces(
    x: np.ndarray, m: np.ndarray, y: np.ndarray, n: np.ndarray, potentials: PotentialSet
) -> Tuple[np.ndarray, np.ndarray]:
    """Conservative forces on both species (no damping)."""
    f_rho = -interaction_sum(potentials.k_rho, x, x, m, True) - interaction_sum(potentials.h_rho, x, y, n)
    f_eta = -interaction_sum(potentials.k_eta, y, y, n, True) - interaction_sum(potentials.h_eta, y, x, m)
    if not potentials.a_rho.is_zero:
        f_rho = f_rho - evaluate_derivative(potentials.a_rho, x)
    if not potentials.a_eta.is_zero:
        f_eta = f_eta - evaluate_derivative(potentials.a_eta, y)
    return f_rho, f_eta


def _accelerations(
    x: np.ndarray, v: np.ndarray, m: np.ndarray,
    y: np.ndarray, w: np.ndarray, n: np.ndarray,
    potentials: PotentialSet, sigma: float, mode: TimeScale, epsilon: Optional[float],
) -> Tuple[np.ndarray, np.ndarray]:
    f_rho, f_eta = species_forces(x, m, y, n, potentials)
    if mode == TimeScale.RESCALED:
        return (f_rho - v) / epsilon, (f_eta - w) / epsilon
    return f_rho - sigma * v, f_eta - sigma * w


def rhs(
    state: TwoSpeciesState,
    potentials: PotentialSet,
    sigma: float,
    mode: TimeScale = TimeScale.ORIGINAL,
    epsilon: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Accelerations of both species.

    original: a = -sigma v - sum m K' - sum n H' - A'
    rescaled: epsilon a = -v - sum m K' - sum n H' - A'
    """
    if mode == TimeScale.RESCALED and not (epsilon is not None and 0.0 < epsilon < math.inf):
        raise ConfigError("rescaled mode needs 0 < epsilon < inf")
    rho, eta = state.rho, state.eta
    return _accelerations(
        rho.positions, rho.velocities, rho.masses,
        eta.positions, eta.velocities, eta.masses,
        potentials, sigma, mode, epsilon,
    )


# =======================
# Time stepping
# =======================

def step_rk3(
    state: TwoSpeciesState,
    dt: float,
    potentials: PotentialSet,
    sigma: float,
    mode: TimeScale = TimeScale.ORIGINAL,
    epsilon: Optional[float] = None,
) -> TwoSpeciesState:
    """One Shu-Osher SSP-RK3 step, written in increment form
    u + dt (L0 + L1 + 4 L2) / 6 so that equilibria are kept bit for bit."""
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    rho, eta = state.rho, state.eta
    m, n = rho.masses, eta.masses
    x0, v0, y0, w0 = rho.positions, rho.velocities, eta.positions, eta.velocities

    def stage(x, v, y, w):
        a, b = _accelerations(x, v, m, y, w, n, potentials, sigma, mode, epsilon)
        return v, a, w, b

    k0 = stage(x0, v0, y0, w0)
    u1 = [u + dt * k for u, k in zip((x0, v0, y0, w0), k0)]
    k1 = stage(*u1)
    u2 = [u + 0.25 * dt * (a + b) for u, a, b in zip((x0, v0, y0, w0), k0, k1)]
    k2 = stage(*u2)
    x, v, y, w = [
        u + dt * (a + b + 4.0 * c) / 6.0 for u, a, b, c in zip((x0, v0, y0, w0), k0, k1, k2)
    ]

    new_time = state.time + dt
    for name, array in (("x", x), ("v", v), ("y", y), ("w", w)):
        if not np.all(np.isfinite(array)):
            logger.error("Non-finite particle state", field=name, time=new_time)
            raise BlowUpError(f"non-finite {name} after step", time=new_time)

    return TwoSpeciesState(
        rho=SpeciesState(x, v, m),
        eta=SpeciesState(y, w, n),
        time=new_time,
    )


# =======================
# Sticky merges
# =======================

def _merge_species(
    species: SpeciesState, toll: float, rule: MergeRule, time: float, label: Species
) -> Tuple[SpeciesState, List[MergeEvent]]:
    if species.count < 2 or not np.any(np.diff(species.positions) < toll):
        return species, []

    x = species.positions.tolist()
    v = species.velocities.tolist()
    m = species.masses.tolist()
    events: List[MergeEvent] = []
    i = 0
    while i < len(x) - 1:
        if x[i + 1] - x[i] >= toll:
            i += 1
            continue
        m1, m2 = m[i], m[i + 1]
        mass = m1 + m2
        if rule == MergeRule.PAPER:
            position = 0.5 * (x[i] + x[i + 1])
            velocity = 0.5 * (v[i] + v[i + 1])
        else:
            position = (m1 * x[i] + m2 * x[i + 1]) / mass
            velocity = (m1 * v[i] + m2 * v[i + 1]) / mass
        event = MergeEvent(
            time=time,
            species=label,
            indices=(i, i + 1),
            momentum_pre=m1 * v[i] + m2 * v[i + 1],
            momentum_post=mass * velocity,
            ke_lost=0.5 * (m1 * v[i] ** 2 + m2 * v[i + 1] ** 2) - 0.5 * mass * velocity ** 2,
        )
        events.append(event)
        if event.momentum_defect > MOMENTUM_TOL:
            logger.warning(
                "Merge changes momentum",
                rule=rule.value,
                species=label.value,
                time=time,
                defect=event.momentum_defect,
            )
        x[i:i + 2] = [position]
        v[i:i + 2] = [velocity]
        m[i:i + 2] = [mass]
        # the merged particle may now be too close to its left neighbour
        i = max(i - 1, 0)

    return SpeciesState(np.array(x), np.array(v), np.array(m)), events


def detect_and_merge(
    state: TwoSpeciesState, toll: float, rule: MergeRule = MergeRule.MOMENTUM
) -> Tuple[TwoSpeciesState, List[MergeEvent]]:
    """Merge same-species neighbours with gap < toll, left to right, to a fixed point."""
    if toll <= 0:
        raise ConfigError(f"toll must be positive, got {toll}")
    rho, rho_events = _merge_species(state.rho, toll, rule, state.time, Species.RHO)
    eta, eta_events = _merge_species(state.eta, toll, rule, state.time, Species.ETA)
    events = rho_events + eta_events
    if events:
        logger.debug("Merged particles", time=state.time, count=len(events))
        return TwoSpeciesState(rho=rho, eta=eta, time=state.time), events
    return state, events


# =======================
# Energy
# =======================

def total_energy(
    state: TwoSpeciesState, potentials: PotentialSet, inertia: float = 1.0
) -> Optional[float]:
    """Kinetic + interaction + external energy; None when h_rho != h_eta.

    Self-interaction sums run over all ordered pairs including i = k, which
    keeps the value unchanged when two coincident particles merge.
    """
    if not potentials.symmetric_cross:
        return None
    rho, eta = state.rho, state.eta
    x, m, y, n = rho.positions, rho.masses, eta.positions, eta.masses

    energy = inertia * (rho.kinetic_energy + eta.kinetic_energy)
    if not potentials.k_rho.is_zero:
        energy += 0.5 * float(m @ evaluate(potentials.k_rho, x[:, None] - x[None, :]) @ m)
    if not potentials.k_eta.is_zero:
        energy += 0.5 * float(n @ evaluate(potentials.k_eta, y[:, None] - y[None, :]) @ n)
    if not potentials.h_rho.is_zero:
        energy += float(m @ evaluate(potentials.h_rho, x[:, None] - y[None, :]) @ n)
    if not potentials.a_rho.is_zero:
        energy += float(np.sum(m * evaluate(potentials.a_rho, x)))
    if not potentials.a_eta.is_zero:
        energy += float(np.sum(n * evaluate(potentials.a_eta, y)))
    return energy


# =======================
# Driver
# =======================

class EulerianSimulator:
    """Service for fixed-step sticky particle runs"""

    def __init__(self, config: SimConfig):
        self.config = config
        self.potentials = config.potentials
        self.mode = config.time_scale
        if self.mode == TimeScale.RESCALED:
            self.sigma = 1.0
            self.epsilon: Optional[float] = config.eps
            self.inertia = config.eps
        else:
            self.sigma = config.damping
            self.epsilon = None
            self.inertia = 1.0
            if not math.isfinite(self.sigma):
                raise ConfigError("original-time runs need a finite sigma", field="sigma")

    def initial_state(self) -> TwoSpeciesState:
        data = io_service.build_initial_data(self.config)
        rho = SpeciesState.from_unsorted(
            data.rho_positions, data.rho_velocities, np.full(data.rho_positions.size, 1.0 / data.rho_positions.size)
        )
        eta = SpeciesState.from_unsorted(
            data.eta_positions, data.eta_velocities, np.full(data.eta_positions.size, 1.0 / data.eta_positions.size)
        )
        return TwoSpeciesState(rho=rho, eta=eta, time=0.0)

    def diagnostics(
        self, state: TwoSpeciesState, reference: TwoSpeciesState, merge_count: int
    ) -> DiagnosticsRecord:
        rho, eta = state.rho, state.eta
        return DiagnosticsRecord(
            time=state.time,
            kinetic_energy=self.inertia * state.kinetic_energy,
            energy=total_energy(state, self.potentials, self.inertia),
            norm_x=math.sqrt(float(np.sum(rho.masses * rho.positions ** 2))),
            norm_y=math.sqrt(float(np.sum(eta.masses * eta.positions ** 2))),
            norm_v=math.sqrt(float(np.sum(rho.masses * rho.velocities ** 2))),
            norm_w=math.sqrt(float(np.sum(eta.masses * eta.velocities ** 2))),
            w2_reference=product_w2(
                (rho.to_measure(), eta.to_measure()),
                (reference.rho.to_measure(), reference.eta.to_measure()),
            ),
            merge_events=merge_count,
            clusters_rho=rho.count,
            clusters_eta=eta.count,
        )

    def run(self, initial: Optional[TwoSpeciesState] = None) -> EulerianRun:
        config = self.config
        started = clock.perf_counter()
        state = initial if initial is not None else self.initial_state()
        logger.info(
            "Starting eulerian run",
            n_rho=state.rho.count,
            n_eta=state.eta.count,
            mode=self.mode.value,
            sigma=self.sigma,
            epsilon=self.epsilon,
            steps=config.n_steps,
        )

        state, events = detect_and_merge(state, config.toll, config.merge_rule)
        self._check(state)
        run = EulerianRun(events=list(events))
        reference = state
        run.snapshots.append(state)
        run.diagnostics.append(self.diagnostics(state, reference, len(run.events)))

        for step in range(1, config.n_steps + 1):
            state = step_rk3(state, config.dt, self.potentials, self.sigma, self.mode, self.epsilon)
            state = replace(state, time=step * config.dt)
            state, events = detect_and_merge(state, config.toll, config.merge_rule)
            self._check(state)
            run.events.extend(events)
            if step % config.output_stride == 0 or step == config.n_steps:
                run.snapshots.append(state)
                run.diagnostics.append(self.diagnostics(state, reference, len(run.events)))

        logger.info(
            "Finished eulerian run",
            merges=len(run.events),
            clusters_rho=state.rho.count,
            clusters_eta=state.eta.count,
            elapsed=round(clock.perf_counter() - started, 3),
        )
        return run

    @staticmethod
    def _check(state: TwoSpeciesState) -> None:
        state.rho.check_invariants("rho")
        state.eta.check_invariants("eta")


def simulate(config: SimConfig, initial: Optional[TwoSpeciesState] = None) -> EulerianRun:
    return EulerianSimulator(config).run(initial)

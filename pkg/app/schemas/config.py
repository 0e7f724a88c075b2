"""
Experiment configuration schema
"""

import math
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import settings
from .potential import PotentialSet


class SolverKind(str, Enum):
    """Which integrator a run uses"""
    EULERIAN = "eulerian"
    LAGRANGIAN_SECOND = "lagrangian_second"
    LAGRANGIAN_FIRST = "lagrangian_first"
    LAGRANGIAN_NEWTONIAN = "lagrangian_newtonian"
    PICARD = "picard"


class MergeRule(str, Enum):
    """Sticky merge rule for particle collisions.

    momentum: mass-weighted position and velocity. paper: plain averages of
    position and velocity, which change momentum when the masses differ.
    "midpoint" is accepted as an alias of "paper".
    """
    MOMENTUM = "momentum"
    PAPER = "paper"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.strip().lower() == "midpoint":
            return cls.PAPER
        return None


class InitialLayout(str, Enum):
    UNIFORM_GRID = "uniform_grid"
    RANDOM_SORTED = "random_sorted"
    EXPLICIT = "explicit"


class TimeScale(str, Enum):
    """Original time t or rescaled time t/sigma (epsilon multiplies inertia)"""
    ORIGINAL = "original"
    RESCALED = "rescaled"


class VelocityScaling(str, Enum):
    """fixed: velocities used as drawn. overdamped: drawn values are
    original-time velocities and get multiplied by sigma."""
    FIXED = "fixed"
    OVERDAMPED = "overdamped"


LAGRANGIAN_SOLVERS = (
    SolverKind.LAGRANGIAN_SECOND,
    SolverKind.LAGRANGIAN_FIRST,
    SolverKind.LAGRANGIAN_NEWTONIAN,
    SolverKind.PICARD,
)


class SimConfig(BaseModel):
    """Full description of one run"""
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    solver: SolverKind
    potentials: PotentialSet = Field(default_factory=PotentialSet)

    # Discretization sizes
    n_rho: Optional[int] = Field(None, ge=1)
    n_eta: Optional[int] = Field(None, ge=1)
    n_cells: Optional[int] = Field(None, ge=1)

    # Damping: exactly one of sigma / epsilon
    sigma: Optional[float] = Field(None, ge=0)
    epsilon: Optional[float] = Field(None, ge=0)
    time_scale: TimeScale = TimeScale.ORIGINAL

    # Time stepping
    dt: float = Field(default_factory=lambda: settings.default_dt, gt=0)
    horizon: float = Field(..., gt=0)
    output_stride: int = Field(default_factory=lambda: settings.default_output_stride, ge=1)

    # Collisions
    toll: float = Field(default_factory=lambda: settings.default_toll, gt=0)
    merge_rule: MergeRule = MergeRule.MOMENTUM
    cluster_tol: float = Field(0.0, ge=0)

    # Initial data
    initial_layout: InitialLayout = InitialLayout.UNIFORM_GRID
    position_range: Tuple[float, float] = (0.0, 1.0)
    velocity_range: Tuple[float, float] = Field(
        default_factory=lambda: (settings.default_velocity_low, settings.default_velocity_high)
    )
    velocity_scaling: VelocityScaling = VelocityScaling.FIXED
    positions_rho: Optional[List[float]] = None
    positions_eta: Optional[List[float]] = None
    velocities_rho: Optional[List[float]] = None
    velocities_eta: Optional[List[float]] = None
    seed: Optional[int] = Field(default_factory=lambda: settings.default_seed, ge=0)

    # Picard iteration
    picard_tol: float = Field(default_factory=lambda: settings.picard_tol, gt=0)
    picard_max_iters: int = Field(default_factory=lambda: settings.picard_max_iters, ge=1)

    @field_validator("velocity_range", "position_range")
    @classmethod
    def validate_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] > v[1]:
            raise ValueError(f"range lower bound {v[0]} exceeds upper bound {v[1]}")
        return v

    @model_validator(mode="after")
    def check_consistency(self) -> "SimConfig":
        if (self.sigma is None) == (self.epsilon is None):
            raise ValueError("exactly one of sigma and epsilon must be given")

        if self.solver == SolverKind.EULERIAN:
            if self.rho_count is None or self.eta_count is None:
                raise ValueError("eulerian solver needs n_rho and n_eta (or n_cells)")
        elif self.grid_size is None:
            raise ValueError(f"{self.solver.value} solver needs n_cells (or n_rho)")

        if self.solver in (SolverKind.LAGRANGIAN_SECOND, SolverKind.PICARD):
            if not (0.0 < self.eps < math.inf):
                raise ValueError(f"{self.solver.value} solver needs 0 < epsilon < inf, got {self.eps}")
        if self.solver == SolverKind.PICARD and self.potentials.non_smooth_slots():
            slots = ", ".join(self.potentials.non_smooth_slots())
            raise ValueError(f"picard solver needs kernels with Lipschitz derivative, not: {slots}")
        if self.solver == SolverKind.LAGRANGIAN_NEWTONIAN:
            if not self.potentials.newtonian_self:
                raise ValueError("lagrangian_newtonian needs newtonian k_rho and k_eta")
            if not self.potentials.symmetric_cross:
                raise ValueError("lagrangian_newtonian needs h_rho == h_eta")
        if self.solver == SolverKind.EULERIAN and self.time_scale == TimeScale.RESCALED:
            if not (0.0 < self.eps < math.inf):
                raise ValueError("rescaled eulerian run needs 0 < epsilon < inf")

        if self.initial_layout == InitialLayout.EXPLICIT:
            if self.positions_rho is None or self.positions_eta is None:
                raise ValueError("explicit layout needs positions_rho and positions_eta")
            for name, positions in (("rho", self.positions_rho), ("eta", self.positions_eta)):
                if self.n_rho is not None and name == "rho" and len(positions) != self.n_rho:
                    raise ValueError(f"positions_rho has {len(positions)} entries, expected {self.n_rho}")
                if self.n_eta is not None and name == "eta" and len(positions) != self.n_eta:
                    raise ValueError(f"positions_eta has {len(positions)} entries, expected {self.n_eta}")
                if self.solver in LAGRANGIAN_SOLVERS and len(positions) != self.grid_size:
                    raise ValueError(
                        f"positions_{name} has {len(positions)} entries, grid has {self.grid_size} cells"
                    )
        for name, velocities, positions in (
            ("rho", self.velocities_rho, self.positions_rho),
            ("eta", self.velocities_eta, self.positions_eta),
        ):
            if velocities is not None and positions is not None and len(velocities) != len(positions):
                raise ValueError(f"velocities_{name} and positions_{name} differ in length")

        if self.uses_randomness and self.seed is None:
            raise ValueError("seed is required when initial data is random")
        return self

    # =======================
    # Derived quantities
    # =======================

    @property
    def eps(self) -> float:
        """epsilon = sigma^-2 (inf for sigma = 0)"""
        if self.epsilon is not None:
            return self.epsilon
        return math.inf if self.sigma == 0 else self.sigma ** -2

    @property
    def damping(self) -> float:
        """sigma = epsilon^-1/2 (inf for epsilon = 0)"""
        if self.sigma is not None:
            return self.sigma
        return math.inf if self.epsilon == 0 else self.epsilon ** -0.5

    @property
    def rho_count(self) -> Optional[int]:
        if self.positions_rho is not None:
            return len(self.positions_rho)
        return self.n_rho if self.n_rho is not None else self.n_cells

    @property
    def eta_count(self) -> Optional[int]:
        if self.positions_eta is not None:
            return len(self.positions_eta)
        return self.n_eta if self.n_eta is not None else self.n_cells

    @property
    def grid_size(self) -> Optional[int]:
        return self.n_cells if self.n_cells is not None else self.rho_count

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def uses_randomness(self) -> bool:
        random_positions = self.initial_layout == InitialLayout.RANDOM_SORTED
        random_velocities = (
            self.velocity_range[0] < self.velocity_range[1]
            and (self.velocities_rho is None or self.velocities_eta is None)
        )
        return random_positions or random_velocities

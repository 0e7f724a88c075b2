"""
Run records: merge events, diagnostics, metadata and experiment results
"""

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, computed_field


class Species(str, Enum):
    RHO = "rho"
    ETA = "eta"


class MergeEvent(BaseModel):
    """One sticky merge of two adjacent same-species particles"""
    time: float
    species: Species
    indices: Tuple[int, int]
    momentum_pre: float
    momentum_post: float
    ke_lost: float

    @property
    def momentum_defect(self) -> float:
        return abs(self.momentum_pre - self.momentum_post)


class DiagnosticsRecord(BaseModel):
    """Per-output-time summary of a run"""
    time: float
    kinetic_energy: float
    energy: Optional[float] = Field(None, description="Undefined for asymmetric cross potentials")
    norm_x: float
    norm_y: float
    norm_v: float
    norm_w: float
    w2_reference: Optional[float] = None
    merge_events: int = 0
    clusters_rho: int
    clusters_eta: int


class RunMetadata(BaseModel):
    """Provenance written beside every output bundle"""
    app_name: str
    version: str
    solver: str
    rk_tableau: str = "shu-osher-ssp-rk3"
    resolvent_scheme: str = "implicit-cone-projection-pava"
    config_hash: str
    seed: Optional[int]
    wall_time_seconds: float
    config: Dict[str, Any]


# =======================
# Experiments
# =======================

class SweepRow(BaseModel):
    """One damping value of a sweep; sigma None means the first-order limit"""
    sigma: Optional[float]
    epsilon: float
    d_value: float = Field(..., ge=0)
    terminal_w2: float = Field(..., ge=0)
    runtime_seconds: float


class SweepResult(BaseModel):
    rows: List[SweepRow]
    times: List[float]
    slope: Optional[float] = None

    @property
    def sigmas(self) -> List[Optional[float]]:
        return [row.sigma for row in self.rows]

    @property
    def d_values(self) -> List[float]:
        return [row.d_value for row in self.rows]


class DecaySeries(BaseModel):
    """Large-time decay of a Newtonian run toward the well center"""
    center: float
    times: List[float]
    norm_x: List[float]
    norm_y: List[float]
    norm_v: List[float]
    norm_w: List[float]
    energy: List[float]
    w2_center: List[float]
    kinetic_integral: List[float]

    def total_norm(self, index: int) -> float:
        return self.norm_x[index] + self.norm_y[index] + self.norm_v[index] + self.norm_w[index]


class CheckResult(BaseModel):
    """Outcome of one acceptance criterion"""
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: Optional[str] = None


class ExperimentSummary(BaseModel):
    experiment: str
    checks: List[CheckResult] = Field(default_factory=list)
    data: Dict[str, Any] = Field(default_factory=dict)

    @computed_field  # type: ignore[misc]
    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failed_checks(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]

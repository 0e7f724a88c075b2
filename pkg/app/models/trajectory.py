"""
Containers for completed runs.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from app.schemas.run import DiagnosticsRecord, MergeEvent
from .state import LagrangianState, TwoSpeciesState


def _records_frame(records: List, columns: List[str]) -> pd.DataFrame:
    if not records:
        return pd.DataFrame(columns=columns)
    return pd.DataFrame([record.model_dump(mode="json") for record in records], columns=columns)


DIAGNOSTICS_COLUMNS = list(DiagnosticsRecord.model_fields)
EVENT_COLUMNS = ["time", "species", "indices", "momentum_pre", "momentum_post", "ke_lost"]


@dataclass
class EulerianRun:
    snapshots: List[TwoSpeciesState] = field(default_factory=list)
    events: List[MergeEvent] = field(default_factory=list)
    diagnostics: List[DiagnosticsRecord] = field(default_factory=list)

    @property
    def final(self) -> TwoSpeciesState:
        return self.snapshots[-1]

    def cluster_history(self) -> List[tuple]:
        return [(s.time, s.rho.count, s.eta.count) for s in self.snapshots]

    def snapshots_frame(self) -> pd.DataFrame:
        return pd.concat([s.to_frame() for s in self.snapshots], ignore_index=True)

    def events_frame(self) -> pd.DataFrame:
        frame = _records_frame(self.events, EVENT_COLUMNS)
        if len(frame):
            frame["indices"] = [f"{e.indices[0]};{e.indices[1]}" for e in self.events]
        return frame

    def diagnostics_frame(self) -> pd.DataFrame:
        return _records_frame(self.diagnostics, DIAGNOSTICS_COLUMNS)


@dataclass
class LagrangianRun:
    snapshots: List[LagrangianState] = field(default_factory=list)
    diagnostics: List[DiagnosticsRecord] = field(default_factory=list)

    @property
    def final(self) -> LagrangianState:
        return self.snapshots[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def snapshots_frame(self) -> pd.DataFrame:
        return pd.concat([s.to_frame() for s in self.snapshots], ignore_index=True)

    def diagnostics_frame(self) -> pd.DataFrame:
        return _records_frame(self.diagnostics, DIAGNOSTICS_COLUMNS)


@dataclass
class PicardResult:
    """Converged Picard trajectory on the step grid t_k = k * dt."""

    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    iterations: List[int] = field(default_factory=list)
    distances: List[List[float]] = field(default_factory=list)
    last_ratio: Optional[float] = None

    @property
    def n_windows(self) -> int:
        return len(self.iterations)

    def contraction_ratios(self, window: int = 0) -> List[float]:
        d = self.distances[window]
        return [d[i + 1] / d[i] for i in range(len(d) - 1) if d[i] > 0]

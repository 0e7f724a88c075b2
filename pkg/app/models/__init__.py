"""
Numerical state objects
"""

from .measure import AtomicMeasure, PseudoInverse, GridFunction, ClusterPartition, MASS_TOL
from .state import SpeciesState, TwoSpeciesState, LagrangianState, ForceSample
from .trajectory import EulerianRun, LagrangianRun, PicardResult

__all__ = [
    "AtomicMeasure",
    "PseudoInverse",
    "GridFunction",
    "ClusterPartition",
    "MASS_TOL",
    "SpeciesState",
    "TwoSpeciesState",
    "LagrangianState",
    "ForceSample",
    "EulerianRun",
    "LagrangianRun",
    "PicardResult",
]

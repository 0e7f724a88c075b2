"""
Numerical services
"""

from .eulerian_service import EulerianSimulator
from .lagrangian_service import LagrangianSimulator

__all__ = [
    "EulerianSimulator",
    "LagrangianSimulator",
]

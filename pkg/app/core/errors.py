"""
Exception hierarchy and exit codes
"""

from typing import Any, Dict, Optional


class StickyLabError(Exception):
    """Base error; carries a machine-readable code and a CLI exit code."""

    code: str = "error"
    exit_code: int = 2

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "error": self.code,
            "exit_code": self.exit_code,
            "message": self.message,
        }
        if self.details:
            payload["details"] = self.details
        return payload


# =======================
# Configuration / input
# =======================

class ConfigError(StickyLabError):
    code = "config_error"
    exit_code = 1

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None, **details: Any):
        if line is not None:
            details["line"] = line
        if field is not None:
            details["field"] = field
        super().__init__(message, **details)
        self.line = line
        self.field = field


class InputError(StickyLabError, ValueError):
    code = "input_error"
    exit_code = 1


class GridMismatchError(InputError):
    code = "grid_mismatch"


class PreconditionError(InputError):
    code = "precondition_failed"


# =======================
# Numerical failures
# =======================

class NumericalError(StickyLabError):
    code = "numerical_error"
    exit_code = 2


class BlowUpError(NumericalError):
    code = "blow_up"

    def __init__(self, message: str, time: float, **details: Any):
        super().__init__(message, time=time, **details)
        self.time = time


class OrderingError(NumericalError):
    code = "ordering_violated"


class ConvergenceError(NumericalError):
    code = "no_convergence"

    def __init__(self, message: str, last_ratio: Optional[float], **details: Any):
        super().__init__(message, last_ratio=last_ratio, **details)
        self.last_ratio = last_ratio


# =======================
# Acceptance checks
# =======================

class AcceptanceError(StickyLabError):
    code = "acceptance_failed"
    exit_code = 3

"""
Kernel evaluation and grid-sampled admissibility checks
"""

import math
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import structlog

from app.config import settings
from app.core.errors import InputError
from app.schemas.potential import AdmissibilityReport, PotentialFamily, PotentialSpec

logger = structlog.get_logger(__name__)

ArrayLike = Union[float, np.ndarray]

# Tail growth exponents are measured between radius/2 and radius.
GROWTH_SLACK = 0.05
FLAG_TOL = 1e-12


def _prepare(x: Any) -> Tuple[np.ndarray, bool]:
    array = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(array)):
        raise InputError("potential argument must be finite")
    return array, array.ndim == 0


def evaluate(spec: PotentialSpec, x: ArrayLike) -> ArrayLike:
    """K(x) for the given potential; vectorized over numpy arrays."""
    array, scalar = _prepare(x)
    r = array - spec.center
    family = spec.family

    if family == PotentialFamily.ZERO:
        out = np.zeros_like(r)
    elif family == PotentialFamily.GAUSSIAN_EXP:
        out = spec.amplitude * np.exp(-spec.scale * np.abs(r) ** spec.exponent)
    elif family == PotentialFamily.POWER:
        out = spec.amplitude * np.abs(r) ** spec.exponent
    elif family == PotentialFamily.NEWTONIAN:
        out = spec.amplitude * np.abs(r)
    elif family == PotentialFamily.QUADRATIC_WELL:
        out = spec.amplitude * r * r
    else:
        raise InputError(f"Unknown potential family: {family}")

    return float(out) if scalar else out


def evaluate_derivative(spec: PotentialSpec, x: ArrayLike) -> ArrayLike:
    """K'(x); odd about the center, sign(0) = 0 for the newtonian kink."""
    array, scalar = _prepare(x)
    r = array - spec.center
    a = np.abs(r)
    family = spec.family

    if family == PotentialFamily.ZERO:
        out = np.zeros_like(r)
    elif family == PotentialFamily.GAUSSIAN_EXP:
        p = spec.exponent
        out = (
            spec.amplitude
            * np.exp(-spec.scale * a ** p)
            * (-spec.scale * p * a ** (p - 1.0))
            * np.sign(r)
        )
    elif family == PotentialFamily.POWER:
        p = spec.exponent
        out = spec.amplitude * p * a ** (p - 1.0) * np.sign(r)
    elif family == PotentialFamily.NEWTONIAN:
        out = spec.amplitude * np.sign(r)
    elif family == PotentialFamily.QUADRATIC_WELL:
        out = 2.0 * spec.amplitude * r
    else:
        raise InputError(f"Unknown potential family: {family}")

    return float(out) if scalar else out


def is_smooth(spec: PotentialSpec) -> bool:
    """True when K' is Lipschitz near the center."""
    return spec.has_lipschitz_derivative


def derivative_lipschitz(spec: PotentialSpec, radius: float, n_samples: int = 4001) -> float:
    """Largest finite-difference slope of K' on [center - radius, center + radius].

    The newtonian derivative is piecewise constant, so 0 is returned for it;
    callers that need smoothness check is_smooth first.
    """
    if spec.is_zero or spec.family == PotentialFamily.NEWTONIAN:
        return 0.0
    if spec.family == PotentialFamily.QUADRATIC_WELL:
        return 2.0 * abs(spec.amplitude)
    x = spec.center + np.linspace(-radius, radius, max(n_samples, 3))
    slopes = np.abs(np.diff(evaluate_derivative(spec, x))) / np.diff(x)
    return float(slopes.max())


def _tail_exponent(f: Any, center: float, radius: float) -> float:
    """log2 growth of a positive quantity between radius/2 and radius (both tails)."""
    edge = max(f(center + radius), f(center - radius))
    half = max(f(center + radius / 2.0), f(center - radius / 2.0))
    if edge <= 0.0:
        return -math.inf
    if half <= 0.0:
        return math.inf
    return math.log(edge / half) / math.log(2.0)


def _first_exceeding(r: np.ndarray, excess: np.ndarray) -> Optional[float]:
    """Smallest positive offset r > 1 where excess > 0."""
    mask = (r > 1.0) & (excess > 0.0)
    if not np.any(mask):
        return None
    return float(r[mask].min())


def validate(
    spec: PotentialSpec,
    grid_radius: Optional[float] = None,
    n_samples: Optional[int] = None,
) -> AdmissibilityReport:
    """Check (A), (SQ), (SL), (AT), (H1), (H2) on a symmetric grid about the center.

    Failures are reported, never raised. Constants are the tightest values
    consistent with the samples.
    """
    radius = grid_radius if grid_radius is not None else settings.validate_radius
    n = n_samples if n_samples is not None else settings.validate_samples
    if n < 3:
        raise InputError(f"n_samples must be >= 3, got {n}")

    c = spec.center
    r = np.linspace(-radius, radius, n)
    k = evaluate(spec, c + r)
    kp = evaluate_derivative(spec, c + r)
    nz = r != 0.0
    scale = 1.0 + float(np.max(np.abs(k)))

    witnesses: Dict[str, float] = {}

    # (A): evenness about the center; K(center) = 0 is advisory
    asym = np.abs(k - evaluate(spec, c - r))
    satisfies_a = bool(asym.max() <= FLAG_TOL * scale)
    if not satisfies_a:
        witnesses["A"] = c + float(r[np.argmax(asym)])
    vanishes = abs(evaluate(spec, c)) <= FLAG_TOL * scale

    # (SQ): K <= C (1 + |x|^2)
    c_sq = max(float(np.max(k / (1.0 + r * r))), 0.0)
    growth_k = _tail_exponent(lambda x: evaluate(spec, x), c, radius)
    satisfies_sq = growth_k <= 2.0 + GROWTH_SLACK
    if not satisfies_sq:
        inner = np.abs(r) <= 1.0
        c_inner = max(float(np.max(k[inner] / (1.0 + r[inner] ** 2))), 0.0)
        hit = _first_exceeding(r, k - c_inner * (1.0 + r * r))
        witnesses["SQ"] = c + (hit if hit is not None else radius)

    # (SL): |K'| <= C (1 + |x|)
    abs_kp = np.abs(kp)
    # one-sided limits at the center catch kinks such as sign(x)
    kink = np.abs(evaluate_derivative(spec, np.array([np.nextafter(c, -np.inf), np.nextafter(c, np.inf)])))
    c_sl = max(float(np.max(abs_kp / (1.0 + np.abs(r)))), float(kink.max()))
    growth_kp = _tail_exponent(lambda x: abs(evaluate_derivative(spec, x)), c, radius)
    satisfies_sl = growth_kp <= 1.0 + GROWTH_SLACK
    if not satisfies_sl:
        inner = np.abs(r) <= 1.0
        c_inner = float(np.max(abs_kp[inner] / (1.0 + np.abs(r[inner]))))
        hit = _first_exceeding(r, abs_kp - c_inner * (1.0 + np.abs(r)))
        witnesses["SL"] = c + (hit if hit is not None else radius)

    # (AT): K'(x) (x - center) >= 0
    at = kp * r
    at_violation = at < -FLAG_TOL * (1.0 + np.abs(at))
    satisfies_at = not bool(np.any(at_violation))
    if not satisfies_at:
        bad = np.flatnonzero(at_violation)
        witnesses["AT"] = c + float(r[bad[np.argmin(np.abs(r[bad]))]])

    # (H1): A >= lambda |x|^2 and (H2): x A' >= alpha |x|^2
    ratio_h1 = k[nz] / r[nz] ** 2
    lam = float(ratio_h1.min())
    satisfies_h1 = lam > 0.0 and growth_k >= 2.0 - GROWTH_SLACK
    if not satisfies_h1:
        witnesses["H1"] = c + (float(r[nz][np.argmin(ratio_h1)]) if lam <= 0.0 else radius)

    ratio_h2 = kp[nz] / r[nz]
    alpha = float(ratio_h2.min())
    satisfies_h2 = alpha > 0.0 and growth_kp >= 1.0 - GROWTH_SLACK
    if not satisfies_h2:
        witnesses["H2"] = c + (float(r[nz][np.argmin(ratio_h2)]) if alpha <= 0.0 else radius)

    failed: List[str] = [name for name in ("A", "SQ", "SL", "AT", "H1", "H2") if name in witnesses]
    report = AdmissibilityReport(
        satisfies_A=satisfies_a,
        satisfies_SQ=satisfies_sq,
        satisfies_SL=satisfies_sl,
        satisfies_AT=satisfies_at,
        satisfies_H1=satisfies_h1,
        satisfies_H2=satisfies_h2,
        vanishes_at_center=vanishes,
        witness=witnesses[failed[0]] if failed else None,
        failed=failed,
        constants={"C_SQ": c_sq, "C_SL": c_sl, "lambda": lam, "alpha": alpha},
    )
    logger.debug("Validated potential", potential=spec.describe(), failed=failed)
    return report


def interaction_sum(
    kernel: PotentialSpec,
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    exclude_self: bool = False,
) -> np.ndarray:
    """sum_k weights[k] * K'(x_i - y_k) for every i; the diagonal is dropped when exclude_self."""
    if kernel.is_zero:
        return np.zeros(np.shape(x))
    kp = evaluate_derivative(kernel, np.subtract.outer(x, y))
    if exclude_self:
        np.fill_diagonal(kp, 0.0)
    return np.sum(kp * weights[None, :], axis=1)

"""
Potential-related schemas
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class PotentialFamily(str, Enum):
    """Closed-form kernel families"""
    GAUSSIAN_EXP = "gaussian_exp"
    POWER = "power"
    NEWTONIAN = "newtonian"
    QUADRATIC_WELL = "quadratic_well"
    ZERO = "zero"


class PotentialSpec(BaseModel):
    """One kernel: family plus parameters.

    gaussian_exp: amplitude * exp(-scale * |x - center|^exponent)
    power:        amplitude * |x - center|^exponent
    newtonian:    amplitude * |x - center|
    quadratic_well: amplitude * |x - center|^2
    """
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    family: PotentialFamily = PotentialFamily.ZERO
    amplitude: float = 1.0
    exponent: float = 2.0
    scale: float = Field(1.0, gt=0)
    center: float = 0.0

    @model_validator(mode="after")
    def check_family_parameters(self) -> "PotentialSpec":
        if self.family in (PotentialFamily.GAUSSIAN_EXP, PotentialFamily.POWER) and self.exponent < 1:
            raise ValueError(f"{self.family.value} needs exponent >= 1 for a C1 kernel, got {self.exponent}")
        if self.family == PotentialFamily.NEWTONIAN and self.amplitude <= 0:
            raise ValueError("newtonian family needs amplitude > 0")
        return self

    @property
    def is_zero(self) -> bool:
        return self.family == PotentialFamily.ZERO or self.amplitude == 0.0

    @property
    def is_newtonian(self) -> bool:
        return self.family == PotentialFamily.NEWTONIAN

    @property
    def has_lipschitz_derivative(self) -> bool:
        """False when K' is not Lipschitz at the center: newtonian, or |x|^p with p < 2."""
        if self.is_zero:
            return True
        if self.family == PotentialFamily.NEWTONIAN:
            return False
        if self.family in (PotentialFamily.GAUSSIAN_EXP, PotentialFamily.POWER):
            return self.exponent >= 2.0
        return True

    def describe(self) -> str:
        r = "|x|" if self.center == 0 else f"|x-{self.center:g}|"
        if self.family == PotentialFamily.GAUSSIAN_EXP:
            return f"{self.amplitude:g}*exp(-{self.scale:g}*{r}^{self.exponent:g})"
        if self.family == PotentialFamily.POWER:
            return f"{self.amplitude:g}*{r}^{self.exponent:g}"
        if self.family == PotentialFamily.NEWTONIAN:
            return f"{self.amplitude:g}*{r}"
        if self.family == PotentialFamily.QUADRATIC_WELL:
            return f"{self.amplitude:g}*{r}^2"
        return "0"

    # Convenience constructors used by figure presets and tests
    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls()

    @classmethod
    def gaussian(cls, amplitude: float, exponent: float = 2.0, scale: float = 1.0) -> "PotentialSpec":
        return cls(family=PotentialFamily.GAUSSIAN_EXP, amplitude=amplitude, exponent=exponent, scale=scale)

    @classmethod
    def power(cls, amplitude: float, exponent: float) -> "PotentialSpec":
        return cls(family=PotentialFamily.POWER, amplitude=amplitude, exponent=exponent)

    @classmethod
    def newtonian(cls, amplitude: float = 1.0) -> "PotentialSpec":
        return cls(family=PotentialFamily.NEWTONIAN, amplitude=amplitude)

    @classmethod
    def well(cls, amplitude: float, center: float = 0.0) -> "PotentialSpec":
        return cls(family=PotentialFamily.QUADRATIC_WELL, amplitude=amplitude, center=center)


POTENTIAL_SLOTS = ("k_rho", "k_eta", "h_rho", "h_eta", "a_rho", "a_eta")


class PotentialSet(BaseModel):
    """The six kernels of a two-species system; unset slots are zero"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_rho: PotentialSpec = Field(default_factory=PotentialSpec)
    k_eta: PotentialSpec = Field(default_factory=PotentialSpec)
    h_rho: PotentialSpec = Field(default_factory=PotentialSpec)
    h_eta: PotentialSpec = Field(default_factory=PotentialSpec)
    a_rho: PotentialSpec = Field(default_factory=PotentialSpec)
    a_eta: PotentialSpec = Field(default_factory=PotentialSpec)

    @property
    def symmetric_cross(self) -> bool:
        return self.h_rho == self.h_eta

    @property
    def newtonian_self(self) -> bool:
        return self.k_rho.is_newtonian and self.k_eta.is_newtonian

    def slots(self) -> Dict[str, PotentialSpec]:
        return {name: getattr(self, name) for name in POTENTIAL_SLOTS}

    def non_smooth_slots(self) -> List[str]:
        return [name for name, spec in self.slots().items() if not spec.has_lipschitz_derivative]


class AdmissibilityReport(BaseModel):
    """Grid-sampled check of the admissibility conditions for one kernel"""
    satisfies_A: bool
    satisfies_SQ: bool
    satisfies_SL: bool
    satisfies_AT: bool
    satisfies_H1: bool
    satisfies_H2: bool
    vanishes_at_center: bool = Field(..., description="Advisory K(center) = 0 clause of (A)")
    witness: Optional[float] = None
    failed: List[str] = Field(default_factory=list)
    constants: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def witness_when_failing(self) -> "AdmissibilityReport":
        flags = (
            self.satisfies_A, self.satisfies_SQ, self.satisfies_SL,
            self.satisfies_AT, self.satisfies_H1, self.satisfies_H2,
        )
        if not all(flags) and self.witness is None:
            raise ValueError("a failing report must carry a witness point")
        return self

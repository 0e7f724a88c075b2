# tests/conftest.py
from typing import Any

import numpy as np
import pytest

from app.config import settings
from app.schemas.config import SimConfig, SolverKind
from app.schemas.potential import PotentialSet, PotentialSpec


@pytest.fixture(autouse=True)
def no_output_override(monkeypatch):
    """Tests decide their own output directories."""
    monkeypatch.setattr(settings, "output_dir", None)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240521)


@pytest.fixture
def zero_potentials() -> PotentialSet:
    return PotentialSet()


@pytest.fixture
def attractive_potentials() -> PotentialSet:
    """All-attractive smooth kernels used by the clustering presets."""
    return PotentialSet(
        k_rho=PotentialSpec.gaussian(-1.0, 3.0),
        k_eta=PotentialSpec.gaussian(-1.0, 4.0),
        h_rho=PotentialSpec.gaussian(-1.0, 2.0),
        h_eta=PotentialSpec.gaussian(-1.0, 2.0),
    )


@pytest.fixture
def gaussian_potentials() -> PotentialSet:
    """Smooth symmetric set with different self kernels."""
    return PotentialSet(
        k_rho=PotentialSpec.gaussian(-1.0, 2.0),
        k_eta=PotentialSpec.gaussian(0.5, 2.0, scale=2.0),
        h_rho=PotentialSpec.gaussian(-0.5, 2.0),
        h_eta=PotentialSpec.gaussian(-0.5, 2.0),
    )


@pytest.fixture
def newtonian_potentials() -> PotentialSet:
    """Newtonian self kernels, attractive cross kernel, wells at 0."""
    return PotentialSet(
        k_rho=PotentialSpec.newtonian(),
        k_eta=PotentialSpec.newtonian(),
        h_rho=PotentialSpec.gaussian(-1.0, 2.0),
        h_eta=PotentialSpec.gaussian(-1.0, 2.0),
        a_rho=PotentialSpec.well(1.0),
        a_eta=PotentialSpec.well(1.0),
    )


@pytest.fixture
def make_config():
    """SimConfig factory with small defaults."""

    def factory(**overrides: Any) -> SimConfig:
        data: dict = {
            "solver": SolverKind.EULERIAN,
            "n_rho": 8,
            "n_eta": 6,
            "sigma": 1.0,
            "horizon": 0.05,
            "dt": 1e-3,
            "seed": 7,
        }
        data.update(overrides)
        return SimConfig(**data)

    return factory


@pytest.fixture
def monotone(rng):
    """Random nondecreasing grid function of n cells."""

    def factory(n: int, low: float = -1.0, high: float = 1.0) -> np.ndarray:
        return np.sort(rng.uniform(low, high, n))

    return factory

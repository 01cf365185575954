import numpy as np
import pytest

from core.config import get_settings
from stochham.integrators import IntegratorConfig
from stochham.noise import DriverSpec, sample_path
from stochham.structures import HamiltonianBundle, PhaseStructure, ScalarField
from stochham.systems import build_system


@pytest.fixture(autouse=True)
def clear_settings_cache():
    """Drop cached settings so environment patches take effect."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def canonical():
    """Canonical structure on R^2 with coordinates (q, p)."""
    return PhaseStructure.canonical(1)


@pytest.fixture
def harmonic():
    """h = (q^2 + p^2) / 2."""
    return ScalarField.quadratic(np.eye(2), label="harmonic")


@pytest.fixture
def rigid_body_structure():
    return PhaseStructure.lie_poisson_so3()


@pytest.fixture
def probe_points():
    rng = np.random.default_rng(1234)
    return [rng.normal(size=2) for _ in range(5)]


@pytest.fixture
def probe_points_3d():
    rng = np.random.default_rng(4321)
    return [rng.normal(size=3) for _ in range(5)]


@pytest.fixture
def oscillator():
    """Damped oscillator with m = rho = 1 and nu = 0.5."""
    return build_system("damped_oscillator", {"nu": 0.5})


@pytest.fixture
def deterministic_oscillator():
    return build_system("damped_oscillator", {"nu": 0.0})


@pytest.fixture
def circle():
    return build_system("circle_brownian")


@pytest.fixture
def time_path():
    """Deterministic driver X_t = t on [0, 1] with dt = 1e-3."""
    return sample_path(DriverSpec.time_only(), 1.0, 1e-3, seed=0)


@pytest.fixture
def heun_config():
    return IntegratorConfig(dt=1e-3)


@pytest.fixture
def rotation_invariant_bundle():
    """h = |z|^2 / 2 on R^4, invariant under simultaneous rotation of (q1, q2) and (p1, p2)."""
    return HamiltonianBundle.single(ScalarField.quadratic(np.eye(4), label="|z|^2/2"))

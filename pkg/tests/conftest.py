import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from janglab.geometry import ModelData
from janglab.pipeline import Run

settings.register_profile(
    "janglab", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("janglab")

# one solved Run per model, shared across test modules
_RUNS = {}


def solved_run(n, m_bar=0.0, p_bar=0.0, mesh_check=True):
    key = (n, m_bar, p_bar)
    if key not in _RUNS:
        model = ModelData.hyperbolic(n) if m_bar == p_bar == 0 else ModelData.spherical(n, m_bar, p_bar)
        _RUNS[key] = Run(model, mesh_check=mesh_check, threads=2)
    return _RUNS[key]


@pytest.fixture(scope="session")
def run_n4():
    return solved_run(4, 1.0, 0.0)


@pytest.fixture(scope="session")
def run_hyp4():
    return solved_run(4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

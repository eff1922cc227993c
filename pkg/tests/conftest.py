import json
from importlib import resources

import pytest

import robustkb as rk


@pytest.fixture(scope="session")
def default_cfg() -> rk.ScenarioConfig:
    """The bundled scalar scenario: T=2, dt=1e-3, mu=1."""
    blob = (resources.files("robustkb") / "data" / "default_scenario.json").read_bytes()
    return rk.scenario_from_dict(json.loads(blob))


@pytest.fixture(scope="session")
def default_model(default_cfg):
    return default_cfg.model


@pytest.fixture(scope="session")
def default_bound(default_cfg):
    return default_cfg.bound


@pytest.fixture(scope="session")
def default_riccati(default_model):
    return rk.solve_riccati(default_model)


@pytest.fixture(scope="session")
def fast_model():
    """Same coefficients on a coarse grid (dt=0.01) for cheap tests."""
    return rk.constant_model(-1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0,
                             horizon=2.0, n_steps=200)


@pytest.fixture(scope="session")
def fast_riccati(fast_model):
    return rk.solve_riccati(fast_model)

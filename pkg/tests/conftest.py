import pickle
from pathlib import Path

import numpy as np
import pytest

from wavetrainlab import model, profile, propagator, _spectral as sp

CACHE_DIR = Path(__file__).parent / ".cache"
CACHE_SALT = "v3"  # bump to invalidate cached trajectories after solver changes


def disk_cached(key, builder):
    """Cache expensive, deterministic artifacts between test runs."""
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"{key}-{CACHE_SALT}.pkl"
    if path.exists():
        with open(path, "rb") as fh:
            return pickle.load(fh)
    value = builder()
    with open(path, "wb") as fh:
        pickle.dump(value, fh, protocol=4)
    return value


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(scope="session")
def lo_params():
    return model.LambdaOmegaParams(beta=0.5, q=0.2)


@pytest.fixture(scope="session")
def lo_system(lo_params):
    return model.make_lambda_omega(lo_params)


@pytest.fixture(scope="session")
def lo_profile(lo_params, lo_system):
    guess = model.wave_train(lo_params, sp.grid(64))
    return profile.solve_profile(lo_system, lo_params.k_star, guess,
                                 residual_tol=1e-13)


@pytest.fixture(scope="session")
def small_profile(lo_params, lo_system):
    guess = model.wave_train(lo_params, sp.grid(32))
    return profile.solve_profile(lo_system, lo_params.k_star, guess,
                                 residual_tol=1e-13)


@pytest.fixture(scope="session")
def small_plan(small_profile):
    return propagator.PropagatorPlan(small_profile, n_periods=16)


@pytest.fixture(scope="session")
def nl_params():
    return model.LambdaOmegaParams(beta=0.5, q=0.45)


@pytest.fixture(scope="session")
def nl_system(nl_params):
    return model.make_lambda_omega(nl_params)


@pytest.fixture(scope="session")
def nl_profile_small(nl_params, nl_system):
    guess = model.wave_train(nl_params, sp.grid(32))
    return profile.solve_profile(nl_system, nl_params.k_star, guess,
                                 residual_tol=1e-13)


@pytest.fixture(scope="session")
def nl_plan_small(nl_profile_small):
    return propagator.PropagatorPlan(nl_profile_small, n_periods=16)

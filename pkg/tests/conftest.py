import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(d, seed=0, cond=10.0, dominant=False):
    """Random exactly symmetric SPD matrix with condition number about ``cond``."""
    rng = np.random.default_rng(seed)
    if dominant:
        A = rng.uniform(-1, 1, (d, d))
        A = A + A.T
        np.fill_diagonal(A, 0.0)
        A[np.diag_indices(d)] = np.abs(A).sum(axis=1) + rng.uniform(0.5, 1.5, d)
        return 0.5 * (A + A.T)
    U, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.geomspace(1.0, cond, d)
    A = (U * lam) @ U.T
    return 0.5 * (A + A.T)


def rel_spec(a, b):
    return float(np.linalg.norm(a - b, 2) / np.linalg.norm(b, 2))


@st.composite
def spd_matrices(draw, min_d=2, max_d=10, dominant=False):
    d = draw(st.integers(min_d, max_d))
    seed = draw(st.integers(0, 2**31 - 1))
    cond = draw(st.floats(1.5, 50.0))
    return random_spd(d, seed, cond, dominant)


@pytest.fixture
def spd4():
    return random_spd(4, seed=4)

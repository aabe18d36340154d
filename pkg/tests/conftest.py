import numpy as np
import pytest

from graphem.ssm import ModelParams


def random_spd(n, rng, scale=1.0):
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T + n * np.eye(n)) / n


def random_stable(n, rng, radius=0.9):
    A = rng.standard_normal((n, n))
    s = np.linalg.norm(A, 2)
    return A * (radius / s)


def random_model(rng, Nx=None, Ny=None, K=None, time_varying=False):
    """A small well-conditioned model with O(1) scales."""
    Nx = Nx if Nx is not None else int(rng.integers(1, 4))
    Ny = Ny if Ny is not None else int(rng.integers(1, 4))
    K = K if K is not None else int(rng.integers(1, 7))
    if time_varying:
        H = rng.standard_normal((K, Ny, Nx))
        R = np.stack([random_spd(Ny, rng, scale=0.5) for _ in range(K)])
    else:
        H = rng.standard_normal((Ny, Nx))
        R = random_spd(Ny, rng, scale=0.5)
    params = ModelParams(
        Nx=Nx, Ny=Ny,
        Q=random_spd(Nx, rng),
        H=H, R=R,
        x0_mean=rng.standard_normal(Nx),
        P0=random_spd(Nx, rng),
        K=K,
    )
    A = random_stable(Nx, rng, radius=0.8)
    return params, A


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

"""Parity between the compiled kernels and the pure-NumPy fallback."""
import numpy as np
import pytest

from graphem import _pykernels
from graphem._backend import available_backends
from graphem.ssm import simulate

from conftest import random_model

compiled = available_backends().get("compiled")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def _filter_args(params, A, Y):
    return (
        np.ascontiguousarray(A),
        np.ascontiguousarray(params.Q),
        np.ascontiguousarray(params.H),
        np.ascontiguousarray(params.R),
        np.ascontiguousarray(params.x0_mean),
        np.ascontiguousarray(params.P0),
        np.ascontiguousarray(Y),
    )


@needs_compiled
@pytest.mark.parametrize("time_varying", [False, True])
@pytest.mark.parametrize("dims", [(1, 1, 30), (4, 2, 60), (9, 9, 40), (3, 5, 25)])
def test_filter_and_smoother_parity(dims, time_varying):
    Nx, Ny, K = dims
    rng = np.random.default_rng(hash(dims) % (1 << 31))
    params, A = random_model(rng, Nx=Nx, Ny=Ny, K=K, time_varying=time_varying)
    traj = simulate(params, A, seed=99)
    args = _filter_args(params, A, traj.observations)

    out_p = _pykernels.filter_loop(*args)
    out_c = compiled.filter_loop(*args)
    assert out_p[0] == out_c[0] == -1
    for a, b in zip(out_p[1:], out_c[1:]):
        np.testing.assert_allclose(np.asarray(b), np.asarray(a), rtol=1e-9, atol=1e-11)

    sp = _pykernels.smoother_loop(args[0], args[1], out_p[3], out_p[4])
    sc = compiled.smoother_loop(args[0], args[1],
                                np.ascontiguousarray(out_c[3]),
                                np.ascontiguousarray(out_c[4]))
    assert sp[0] == sc[0] == -1
    assert sp[1] == sc[1]
    for a, b in zip(sp[2:], sc[2:]):
        np.testing.assert_allclose(np.asarray(b), np.asarray(a), rtol=1e-9, atol=1e-11)


@needs_compiled
def test_smoother_jitter_parity():
    # P_pred = Q singular from a zero filtered covariance: one jittered step
    Q = np.ascontiguousarray(np.diag([1.0, 0.0]))
    A = np.ascontiguousarray(np.zeros((2, 2)))
    m_filt = np.zeros((2, 2))
    P_filt = np.zeros((2, 2, 2))
    P_filt[1] = np.eye(2)
    sp = _pykernels.smoother_loop(A, Q, m_filt, P_filt)
    sc = compiled.smoother_loop(A, Q, m_filt, P_filt)
    assert sp[0] == sc[0] == -1
    assert sp[1] == sc[1] == 1
    np.testing.assert_allclose(np.asarray(sc[3]), np.asarray(sp[3]), rtol=1e-12, atol=1e-15)


@needs_compiled
def test_failure_status_parity():
    params_Q = np.ascontiguousarray(np.eye(2))
    A = np.ascontiguousarray(np.array([[2.0, 1.0], [0.0, 1e80]]))
    H = np.ascontiguousarray(np.array([[[1.0, 0.0]]]))
    R = np.ascontiguousarray(np.ones((1, 1, 1)))
    x0 = np.zeros(2)
    P0 = np.ascontiguousarray(np.eye(2))
    Y = np.zeros((8, 1))
    with np.errstate(all="ignore"):
        sp = _pykernels.filter_loop(A, params_Q, H, R, x0, P0, Y)
    sc = compiled.filter_loop(A, params_Q, H, R, x0, P0, Y)
    assert sp[0] == sc[0] > 0

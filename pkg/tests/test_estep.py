import numpy as np
import pytest

from graphem.estep import EStepStats, estep_stats, map_loss, q_gradient, q_value
from graphem.mstep import closed_form_mstep
from graphem.prox import PenaltyTerm, Regularizer
from graphem.ssm import ModelParams, kalman_filter, neg_log_likelihood, rts_smoother, simulate

from conftest import random_model, random_spd, random_stable
from oracles import oracle_joint_smoothing


def _smooth(params, A, Y):
    filt = kalman_filter(params, A, Y)
    return rts_smoother(params, A, filt)


def random_stats(rng, n, k=10):
    Phi = random_spd(n, rng, scale=2.0)
    Psi = random_spd(n, rng, scale=2.0)
    Delta = rng.standard_normal((n, n))
    return EStepStats(Psi=Psi, Delta=Delta, Phi=Phi, K=k)


class TestEstepStats:
    def test_near_deterministic_limit(self):
        eps = 1e-20
        params = ModelParams(Nx=2, Ny=2, Q=eps * np.eye(2), H=np.eye(2), R=eps * np.eye(2),
                             x0_mean=[0.3, -0.7], P0=eps * np.eye(2), K=1)
        A = np.array([[0.5, 0.1], [0.0, 0.4]])
        traj = simulate(params, A, seed=21)
        stats = estep_stats(_smooth(params, A, traj.observations))
        x0, x1 = traj.states
        np.testing.assert_allclose(stats.Psi, np.outer(x1, x1), atol=1e-8)
        np.testing.assert_allclose(stats.Delta, np.outer(x1, x0), atol=1e-8)
        np.testing.assert_allclose(stats.Phi, np.outer(x0, x0), atol=1e-8)

    def test_matches_monte_carlo_expectations(self, rng):
        params, A = random_model(rng, Nx=2, Ny=2, K=3)
        traj = simulate(params, A, seed=22)
        stats = estep_stats(_smooth(params, A, traj.observations))

        mean, cov = oracle_joint_smoothing(params, A, traj.observations)
        L = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
        n_samples = 1_000_000
        Z = np.random.default_rng(7).standard_normal((n_samples, mean.size))
        X = (mean + Z @ L.T).reshape(n_samples, params.K + 1, params.Nx)

        for name, target, first, second in (
            ("Psi", stats.Psi, X[:, 1:], X[:, 1:]),
            ("Delta", stats.Delta, X[:, 1:], X[:, :-1]),
            ("Phi", stats.Phi, X[:, :-1], X[:, :-1]),
        ):
            samples = np.einsum("nki,nkj->nij", first, second)
            mc = samples.mean(axis=0)
            se = samples.std(axis=0) / np.sqrt(n_samples)
            assert np.all(np.abs(mc - target) <= 3.0 * se + 1e-12), name

    def test_phi_positive_definite(self, rng):
        for _ in range(5):
            params, A = random_model(rng)
            traj = simulate(params, A, seed=int(rng.integers(1 << 30)))
            stats = estep_stats(_smooth(params, A, traj.observations))
            assert np.linalg.eigvalsh(stats.Phi).min() > 0
            assert np.max(np.abs(stats.Psi - stats.Psi.T)) == 0.0
            assert np.max(np.abs(stats.Phi - stats.Phi.T)) == 0.0


class TestQValue:
    def test_zero_matrix_leaves_psi_term(self, rng):
        stats = random_stats(rng, 3)
        Q = random_spd(3, rng)
        expected = -0.5 * np.trace(np.linalg.solve(Q, stats.Psi))
        assert q_value(np.zeros((3, 3)), stats, Q) == pytest.approx(expected, rel=1e-12)

    def test_maximizer_is_closed_form_update(self, rng):
        stats = random_stats(rng, 3)
        Q = random_spd(3, rng)
        A_star = closed_form_mstep(stats)
        h = 1e-6
        for i in range(3):
            for j in range(3):
                E = np.zeros((3, 3))
                E[i, j] = h
                deriv = (q_value(A_star + E, stats, Q) - q_value(A_star - E, stats, Q)) / (2 * h)
                assert abs(deriv) < 1e-5

    def test_scalar_closed_formula(self, rng):
        psi, phi = 2.3, 1.7
        delta, q = -0.4, 0.6
        stats = EStepStats(Psi=[[psi]], Delta=[[delta]], Phi=[[phi]], K=5)
        stats.Psi, stats.Delta, stats.Phi = map(np.atleast_2d, (stats.Psi, stats.Delta, stats.Phi))
        for a in (-1.0, 0.0, 0.7):
            expected = -(psi - 2 * delta * a + phi * a * a) / (2 * q)
            assert q_value(np.array([[a]]), stats, [[q]]) == pytest.approx(expected, rel=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        stats = random_stats(rng, 3)
        Q = random_spd(3, rng)
        A = rng.standard_normal((3, 3))
        g = q_gradient(A, stats, Q)
        h = 1e-6
        for i in range(3):
            for j in range(3):
                E = np.zeros((3, 3))
                E[i, j] = h
                num = (q_value(A + E, stats, Q) - q_value(A - E, stats, Q)) / (2 * h)
                assert abs(num - g[i, j]) <= 1e-5 * max(1.0, abs(g[i, j]))

    def test_rejects_non_pd_q(self, rng):
        stats = random_stats(rng, 2)
        with pytest.raises(ValueError, match="positive definite"):
            q_value(np.eye(2), stats, -np.eye(2))


class TestMapLoss:
    def test_empty_regularizer_is_pure_nll(self, rng):
        params, A = random_model(rng, Nx=2, Ny=2, K=5)
        traj = simulate(params, A, seed=31)
        expected = neg_log_likelihood(kalman_filter(params, A, traj.observations))
        assert map_loss(A, params, traj.observations, None) == expected
        assert map_loss(A, params, traj.observations, Regularizer([])) == expected

    def test_stability_violation_gives_infinity(self, rng):
        params, A = random_model(rng, Nx=2, Ny=2, K=5)
        traj = simulate(params, A, seed=32)
        reg = Regularizer([PenaltyTerm.spectral_ball(0.9), PenaltyTerm.l1(1.0)])
        big = 3.0 * np.eye(2)
        assert map_loss(big, params, traj.observations, reg) == np.inf

    def test_mlem_update_never_increases_loss(self):
        for seed in range(20):
            rng = np.random.default_rng(400 + seed)
            params, A0 = random_model(rng, Nx=2, Ny=2, K=40)
            traj = simulate(params, A0, seed=seed)
            A_i = random_stable(2, rng, radius=0.6)
            stats = estep_stats(_smooth(params, A_i, traj.observations))
            A_next = closed_form_mstep(stats)
            l_i = map_loss(A_i, params, traj.observations)
            l_next = map_loss(A_next, params, traj.observations)
            assert l_next <= l_i + 1e-9


class TestMajorization:
    def test_surrogate_dominates_loss_difference(self):
        count = 0
        for nx in (1, 2, 3):
            for trial in (0, 1):
                rng = np.random.default_rng(1000 + 10 * nx + trial)
                params, A_gen = random_model(rng, Nx=nx, Ny=nx, K=25)
                traj = simulate(params, A_gen, seed=nx * 10 + trial)
                for _ in range(17):
                    A_ref = random_stable(nx, rng, radius=float(rng.uniform(0.3, 0.9)))
                    A_test = A_ref + 0.5 * rng.standard_normal((nx, nx))
                    stats = estep_stats(_smooth(params, A_ref, traj.observations), a_ref=A_ref)
                    lhs = (map_loss(A_test, params, traj.observations)
                           - map_loss(A_ref, params, traj.observations))
                    rhs = (-q_value(A_test, stats, params.Q)) - (-q_value(A_ref, stats, params.Q))
                    assert lhs <= rhs + 1e-6
                    count += 1
        assert count >= 100

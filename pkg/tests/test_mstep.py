import numpy as np
import pytest

from graphem.estep import EStepStats
from graphem.mstep import MsConfig, QuadraticTerm, closed_form_mstep, ms_solve
from graphem.prox import PenaltyTerm, Regularizer

from conftest import random_spd
from oracles import reference_solver


def random_surrogate(rng, n, sigma_q=0.5, delta_scale=1.5):
    Phi = random_spd(n, rng, scale=2.0)
    Delta = delta_scale * rng.standard_normal((n, n))
    Psi = random_spd(n, rng, scale=2.0)
    stats = EStepStats(Psi=Psi, Delta=Delta, Phi=Phi, K=10)
    Q = sigma_q ** 2 * np.eye(n)
    return stats, Q


class TestClosedForm:
    def test_identity_when_delta_equals_phi(self, rng):
        Phi = random_spd(3, rng)
        stats = EStepStats(Psi=np.eye(3), Delta=Phi.copy(), Phi=Phi, K=4)
        np.testing.assert_allclose(closed_form_mstep(stats), np.eye(3), atol=1e-12)

    def test_scalar(self):
        stats = EStepStats(Psi=np.atleast_2d(1.0), Delta=np.atleast_2d(2.0),
                           Phi=np.atleast_2d(4.0), K=3)
        assert closed_form_mstep(stats)[0, 0] == pytest.approx(0.5)

    def test_gradient_zero_at_output(self, rng):
        stats, Q = random_surrogate(rng, 4)
        A_star = closed_form_mstep(stats)
        quad = QuadraticTerm(stats, Q)
        assert np.max(np.abs(quad.gradient(A_star))) < 1e-9


class TestMsConfig:
    def test_defaults_in_range(self):
        for M in (2, 3, 5):
            lam, gamma = MsConfig().resolve(M)
            assert 0 < lam < 1.0 / M
            assert lam <= gamma <= (1 - lam) / (M - 1) + 1e-15

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="lambda"):
            MsConfig(lam=0.5).resolve(3)
        with pytest.raises(ValueError, match="gamma"):
            MsConfig(lam=0.2, gamma=0.6).resolve(3)
        with pytest.raises(ValueError, match="xi"):
            MsConfig(xi=0.0).resolve(3)


class TestMsSolve:
    def test_zero_branch_recovers_closed_form(self, rng):
        stats, Q = random_surrogate(rng, 3)
        reg = Regularizer([PenaltyTerm.zero()])
        res = ms_solve(stats, Q, reg, A_init=np.zeros((3, 3)),
                       cfg=MsConfig(xi=1e-12, max_iters=200000))
        assert res.converged
        target = closed_form_mstep(stats)
        assert np.linalg.norm(res.A - target) < 1e-6

    def test_huge_weight_kills_everything(self, rng):
        stats, Q = random_surrogate(rng, 3)
        reg = Regularizer([PenaltyTerm.spectral_ball(0.99), PenaltyTerm.l1(1e6)])
        res = ms_solve(stats, Q, reg, A_init=0.5 * np.eye(3), cfg=MsConfig(xi=1e-10))
        np.testing.assert_array_equal(res.A, np.zeros((3, 3)))

    def test_matches_reference_solver(self, rng):
        stats, Q = random_surrogate(rng, 3)
        kappa, delta = 1.0, 0.99
        ball = PenaltyTerm.spectral_ball(delta)
        l1 = PenaltyTerm.l1(kappa)
        reg = Regularizer([ball, l1])
        res = ms_solve(stats, Q, reg, A_init=np.zeros((3, 3)),
                       cfg=MsConfig(xi=1e-12, max_iters=300000))
        quad = QuadraticTerm(stats, Q)
        ref = reference_solver(quad, ball, l1, 3)
        obj_ms = quad.value(res.A) + l1.value(res.A)
        obj_ref = quad.value(ref) + l1.value(ref)
        assert abs(obj_ms - obj_ref) < 1e-6
        assert np.linalg.norm(res.A, 2) <= delta * (1 + 1e-6)

    def test_non_converged_flag_on_tiny_budget(self, rng):
        stats, Q = random_surrogate(rng, 3)
        reg = Regularizer([PenaltyTerm.spectral_ball(0.99), PenaltyTerm.l1(0.5)])
        res = ms_solve(stats, Q, reg, A_init=np.zeros((3, 3)),
                       cfg=MsConfig(xi=1e-14, max_iters=5))
        assert not res.converged
        assert res.n_iters == 5

    def test_requires_output_branch_term(self, rng):
        stats, Q = random_surrogate(rng, 2)
        with pytest.raises(ValueError, match="output-branch"):
            ms_solve(stats, Q, Regularizer([]), A_init=np.zeros((2, 2)))


class TestProposition1Consequences:
    """Surrogate decrease and agreement with the reference optimum."""

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_output_improves_on_warm_start(self, n):
        rng = np.random.default_rng(600 + n)
        for _ in range(5):
            stats, Q = random_surrogate(rng, n)
            reg = Regularizer([PenaltyTerm.spectral_ball(0.99), PenaltyTerm.l1(0.8)])
            A0 = closed_form_mstep(stats)
            A0 = A0 * min(1.0, 0.9 / np.linalg.norm(A0, 2))
            res = ms_solve(stats, Q, reg, A_init=A0, cfg=MsConfig(xi=1e-10))
            quad = QuadraticTerm(stats, Q)
            start = quad.value(A0) + reg.finite_value(A0)
            end = quad.value(res.A) + reg.finite_value(res.A)
            assert end <= start + 1e-9

    def test_zero_pattern_matches_reference(self):
        rng = np.random.default_rng(77)
        checked = 0
        for _ in range(8):
            stats, Q = random_surrogate(rng, 3, delta_scale=1.0)
            ball = PenaltyTerm.spectral_ball(0.99)
            l1 = PenaltyTerm.l1(float(rng.uniform(0.5, 2.0)))
            reg = Regularizer([ball, l1])
            res = ms_solve(stats, Q, reg, A_init=np.zeros((3, 3)),
                           cfg=MsConfig(xi=1e-12, max_iters=300000))
            ref = reference_solver(QuadraticTerm(stats, Q), ball, l1, 3)
            for idx in np.ndindex(3, 3):
                if abs(ref[idx]) > 1e-6:
                    assert res.A[idx] != 0.0
                    checked += 1
                elif abs(ref[idx]) < 1e-12:
                    assert res.A[idx] == 0.0
                    checked += 1
        assert checked > 10

    def test_iterates_bounded_guard(self, rng):
        stats, Q = random_surrogate(rng, 3)
        reg = Regularizer([PenaltyTerm.spectral_ball(0.99), PenaltyTerm.l1(0.5)])
        res = ms_solve(stats, Q, reg, A_init=np.zeros((3, 3)), cfg=MsConfig(xi=1e-8))
        bound = 10 * (0 + np.linalg.norm(closed_form_mstep(stats)))
        assert np.linalg.norm(res.A) <= bound

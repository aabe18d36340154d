"""E-step statistics and the quadratic surrogate of the MAP loss.

The smoothing pass at a reference matrix A_ref yields three Nx x Nx
sufficient statistics

    Psi   = sum_k ( P^s_k     + m^s_k     m^s_k^T )
    Delta = sum_k ( P^s_k G_{k-1}^T + m^s_k m^s_{k-1}^T )
    Phi   = sum_k ( P^s_{k-1} + m^s_{k-1} m^s_{k-1}^T )

(sums over k = 1..K) which define the surrogate's quadratic data-fit term.
Additive constants independent of A are dropped everywhere; monotonicity
and majorization checks therefore compare differences only.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .ssm import ModelParams, SmootherOutput, kalman_filter, neg_log_likelihood

if TYPE_CHECKING:
    from .prox import Regularizer


@dataclass
class EStepStats:
    """Sufficient statistics of one smoothing pass."""

    Psi: np.ndarray
    Delta: np.ndarray
    Phi: np.ndarray
    K: int
    A_ref: np.ndarray | None = None


def estep_stats(
    smooth: SmootherOutput,
    gains: np.ndarray | None = None,
    a_ref: np.ndarray | None = None,
) -> EStepStats:
    """Accumulate (Psi, Delta, Phi) from smoothed moments.

    ``gains`` defaults to the smoother's stored gains, which were computed
    with the same reference matrix and therefore match the joint smoothing
    cross-covariance P^s_k G_{k-1}^T.
    """
    G = smooth.gains if gains is None else np.asarray(gains)
    ms = smooth.m_smooth
    Ps = smooth.P_smooth
    K = smooth.K

    Psi = Ps[1:].sum(axis=0) + ms[1:].T @ ms[1:]
    Delta = np.einsum("kij,klj->il", Ps[1:], G) + ms[1:].T @ ms[:-1]
    Phi = Ps[:-1].sum(axis=0) + ms[:-1].T @ ms[:-1]
    Psi = 0.5 * (Psi + Psi.T)
    Phi = 0.5 * (Phi + Phi.T)
    return EStepStats(Psi=Psi, Delta=Delta, Phi=Phi, K=K,
                      A_ref=None if a_ref is None else np.array(a_ref))


def q_value(A: np.ndarray, stats: EStepStats, Q: np.ndarray) -> float:
    """Quadratic expectation term -0.5 tr(Q^{-1}(Psi - Delta A^T - A Delta^T + A Phi A^T)).

    The additive constant is fixed to zero.
    """
    A = np.asarray(A, dtype=float)
    try:
        cf = cho_factor(np.asarray(Q, dtype=float), lower=True)
    except np.linalg.LinAlgError:
        raise ValueError("Q is not positive definite") from None
    inner = stats.Psi - stats.Delta @ A.T - A @ stats.Delta.T + A @ stats.Phi @ A.T
    return float(-0.5 * np.trace(cho_solve(cf, inner)))


def q_gradient(A: np.ndarray, stats: EStepStats, Q: np.ndarray) -> np.ndarray:
    """Gradient of :func:`q_value` in A, namely Q^{-1}(Delta - A Phi)."""
    cf = cho_factor(np.asarray(Q, dtype=float), lower=True)
    return cho_solve(cf, stats.Delta - np.asarray(A) @ stats.Phi)


def map_loss(
    A: np.ndarray,
    params: ModelParams,
    observations: np.ndarray,
    regularizer: "Regularizer | None" = None,
) -> float:
    """Exact MAP loss: filtering neg-log-likelihood plus the prior value.

    Returns +inf when A violates a hard constraint term of the
    regularizer (the filter is not run in that case).
    """
    if regularizer is not None:
        reg_val = regularizer.value(A)
        if not np.isfinite(reg_val):
            return float("inf")
    else:
        reg_val = 0.0
    filt = kalman_filter(params, A, observations)
    return neg_log_likelihood(filt) + reg_val

"""Pure-NumPy kernels for the forward/backward Gaussian recursions.

This module is the fallback backend used when the compiled extension is not
available, and the reference the compiled kernels are tested against.  Both
backends implement the same contract:

``filter_loop(A, Q, H, R, x0_mean, P0, Y)``
    returns ``(status, m_pred, P_pred, m_filt, P_filt, innov, S, gain)``
    where ``m_filt``/``P_filt`` have K+1 entries (index 0 holds the prior)
    and the remaining arrays have one entry per observation.  ``status`` is
    -1 on success, else the 1-based step whose innovation covariance failed
    its Cholesky factorization.

``smoother_loop(A, Q, m_filt, P_filt)``
    returns ``(status, jitter_count, m_smooth, P_smooth, G)`` with K+1
    smoothed moments and K gains.  ``jitter_count`` is the number of steps
    where the predicted covariance needed a diagonal jitter before its
    factorization succeeded; ``status`` is -1 on success, else the failing
    step.

``H`` and ``R`` are stacked as (KH, Ny, Nx) / (KR, Ny, Ny) with a leading
dimension of either 1 (constant, broadcast) or K.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

BACKEND_NAME = "pure"

_JITTER_SCALE = 1e-10


def _sym(M):
    return 0.5 * (M + M.T)


def filter_loop(A, Q, H, R, x0_mean, P0, Y):
    K, Ny = Y.shape
    Nx = A.shape[0]
    h_const = H.shape[0] == 1
    r_const = R.shape[0] == 1

    m_pred = np.empty((K, Nx))
    P_pred = np.empty((K, Nx, Nx))
    m_filt = np.empty((K + 1, Nx))
    P_filt = np.empty((K + 1, Nx, Nx))
    innov = np.empty((K, Ny))
    S_out = np.empty((K, Ny, Ny))
    gain = np.empty((K, Nx, Ny))

    m_filt[0] = x0_mean
    P_filt[0] = _sym(P0)

    m = m_filt[0]
    P = P_filt[0]
    for k in range(K):
        Hk = H[0] if h_const else H[k]
        Rk = R[0] if r_const else R[k]

        mp = A @ m
        Pp = _sym(A @ P @ A.T + Q)

        v = Y[k] - Hk @ mp
        HP = Hk @ Pp
        S = _sym(HP @ Hk.T + Rk)
        try:
            # ValueError covers non-finite S from an overflowing model
            cf = cho_factor(S, lower=True)
        except (np.linalg.LinAlgError, ValueError):
            return (k + 1, m_pred, P_pred, m_filt, P_filt, innov, S_out, gain)
        Kg = cho_solve(cf, HP).T

        m = mp + Kg @ v
        P = _sym(Pp - Kg @ S @ Kg.T)

        m_pred[k] = mp
        P_pred[k] = Pp
        innov[k] = v
        S_out[k] = S
        gain[k] = Kg
        m_filt[k + 1] = m
        P_filt[k + 1] = P

    return (-1, m_pred, P_pred, m_filt, P_filt, innov, S_out, gain)


def smoother_loop(A, Q, m_filt, P_filt):
    Kp1, Nx = m_filt.shape
    K = Kp1 - 1

    m_smooth = np.empty((K + 1, Nx))
    P_smooth = np.empty((K + 1, Nx, Nx))
    G = np.empty((K, Nx, Nx))

    m_smooth[K] = m_filt[K]
    P_smooth[K] = P_filt[K]
    jitter_count = 0

    for k in range(K - 1, -1, -1):
        mp = A @ m_filt[k]
        Pp = _sym(A @ P_filt[k] @ A.T + Q)
        try:
            cf = cho_factor(Pp, lower=True)
        except (np.linalg.LinAlgError, ValueError):
            Pp = Pp + (_JITTER_SCALE * np.trace(Pp) / Nx) * np.eye(Nx)
            jitter_count += 1
            try:
                cf = cho_factor(Pp, lower=True)
            except (np.linalg.LinAlgError, ValueError):
                return (k, jitter_count, m_smooth, P_smooth, G)
        # G_k = P_k A^T Pp^{-1}, computed as a solve against the factored Pp
        Gk = cho_solve(cf, A @ P_filt[k]).T

        m_smooth[k] = m_filt[k] + Gk @ (m_smooth[k + 1] - mp)
        P_smooth[k] = _sym(P_filt[k] + Gk @ (P_smooth[k + 1] - Pp) @ Gk.T)
        G[k] = Gk

    return (-1, jitter_count, m_smooth, P_smooth, G)

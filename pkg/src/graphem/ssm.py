"""Linear-Gaussian state-space model: simulation, filtering, smoothing.

The model is

    x_k = A x_{k-1} + q_k,        q_k ~ N(0, Q)
    y_k = H_k x_k + r_k,          r_k ~ N(0, R_k)

with x_0 ~ N(x0_mean, P0).  All model quantities except the transition
matrix A are collected in :class:`ModelParams`; A is passed explicitly to
every operation because estimating it is the whole point of the package.

Covariance inverses are never formed: innovation covariances are factored
with Cholesky and solved against.  Every stored covariance is symmetrized
after each update to control drift over long horizons.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels


class ModelValidationError(ValueError):
    """A model matrix fails its positivity/shape contract."""


class InnovationError(RuntimeError):
    """An innovation covariance was numerically non positive definite."""

    def __init__(self, k: int):
        self.k = k
        super().__init__(
            f"innovation covariance S_{k} is not positive definite; "
            "the model is ill-conditioned at this step"
        )


def _as_seq(M, k_steps: int, name: str, shape: tuple) -> np.ndarray:
    """Normalize a constant or per-step matrix input to a stacked array.

    Returns shape (1, *shape) for constant input, (K, *shape) otherwise.
    """
    arr = np.asarray(M, dtype=float)
    if arr.ndim == len(shape):
        if arr.shape != shape:
            raise ModelValidationError(f"{name} has shape {arr.shape}, expected {shape}")
        return arr[None]
    if arr.ndim == len(shape) + 1:
        if arr.shape != (k_steps, *shape):
            raise ModelValidationError(
                f"{name} sequence has shape {arr.shape}, expected {(k_steps, *shape)}"
            )
        return arr
    raise ModelValidationError(f"{name} must be a matrix or a sequence of matrices")


def _require_spd(M: np.ndarray, name: str) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ModelValidationError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise ModelValidationError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ModelValidationError(f"{name} is not positive definite") from None


@dataclass
class ModelParams:
    """Known quantities of the LG-SSM.

    Parameters
    ----------
    Nx, Ny : int
        State and observation dimensions.
    Q : (Nx, Nx) array
        State-noise covariance, symmetric positive definite.
    H : (Ny, Nx) or (K, Ny, Nx) array
        Observation matrix, constant or per step.
    R : (Ny, Ny) or (K, Ny, Ny) array
        Observation-noise covariance, constant or per step, SPD.
    x0_mean : (Nx,) array
        Prior mean of the initial state.
    P0 : (Nx, Nx) array
        Prior covariance of the initial state, SPD.
    K : int
        Horizon length (number of observations).
    """

    Nx: int
    Ny: int
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    x0_mean: np.ndarray
    P0: np.ndarray
    K: int

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.x0_mean = np.asarray(self.x0_mean, dtype=float).reshape(self.Nx)
        self.P0 = np.asarray(self.P0, dtype=float)
        self.H = _as_seq(self.H, self.K, "H", (self.Ny, self.Nx))
        self.R = _as_seq(self.R, self.K, "R", (self.Ny, self.Ny))

    def validate(self) -> None:
        """Check shapes and positive definiteness, naming the offender."""
        _require_spd(self.Q, "Q")
        _require_spd(self.P0, "P0")
        if self.Q.shape != (self.Nx, self.Nx):
            raise ModelValidationError(f"Q has shape {self.Q.shape}, expected ({self.Nx}, {self.Nx})")
        if self.P0.shape != (self.Nx, self.Nx):
            raise ModelValidationError(f"P0 has shape {self.P0.shape}, expected ({self.Nx}, {self.Nx})")
        for i in range(self.R.shape[0]):
            _require_spd(self.R[i], "R" if self.R.shape[0] == 1 else f"R_{i + 1}")

    def h_at(self, k: int) -> np.ndarray:
        """Observation matrix at step k (1-based)."""
        return self.H[0] if self.H.shape[0] == 1 else self.H[k - 1]

    def r_at(self, k: int) -> np.ndarray:
        """Observation-noise covariance at step k (1-based)."""
        return self.R[0] if self.R.shape[0] == 1 else self.R[k - 1]


@dataclass
class Trajectory:
    """A simulated state/observation path.

    ``states`` holds x_0..x_K (K+1 rows), ``observations`` y_1..y_K.
    """

    states: np.ndarray
    observations: np.ndarray
    seed: int


@dataclass
class FilterOutput:
    """Forward-pass moments, one entry per observation step.

    Arrays with K rows are indexed by step: row k-1 holds the step-k
    quantity.  ``m_filt``/``P_filt`` carry K+1 rows with the prior
    (x0_mean, P0) at index 0.
    """

    m_pred: np.ndarray
    P_pred: np.ndarray
    m_filt: np.ndarray
    P_filt: np.ndarray
    innovations: np.ndarray
    S: np.ndarray
    gains: np.ndarray

    @property
    def K(self) -> int:
        return self.m_pred.shape[0]

    @property
    def m0(self) -> np.ndarray:
        return self.m_filt[0]

    @property
    def P0(self) -> np.ndarray:
        return self.P_filt[0]


@dataclass
class SmootherOutput:
    """Backward-pass moments over k = 0..K plus the K smoother gains."""

    m_smooth: np.ndarray
    P_smooth: np.ndarray
    gains: np.ndarray
    jitter_steps: int = 0

    @property
    def K(self) -> int:
        return self.gains.shape[0]


def simulate(params: ModelParams, A: np.ndarray, seed: int) -> Trajectory:
    """Draw one trajectory from the model under transition matrix A.

    The same (params, A, seed) triple reproduces the trajectory bit for
    bit.  Noise is drawn through Cholesky factors of Q, R_k and P0.
    """
    params.validate()
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("A contains non-finite entries")

    rng = np.random.default_rng(seed)
    Nx, Ny, K = params.Nx, params.Ny, params.K
    Lq = np.linalg.cholesky(params.Q)
    L0 = np.linalg.cholesky(params.P0)
    r_const = params.R.shape[0] == 1
    Lr = np.linalg.cholesky(params.R[0]) if r_const else None

    states = np.empty((K + 1, Nx))
    obs = np.empty((K, Ny))
    states[0] = params.x0_mean + L0 @ rng.standard_normal(Nx)
    for k in range(1, K + 1):
        states[k] = A @ states[k - 1] + Lq @ rng.standard_normal(Nx)
        Lrk = Lr if r_const else np.linalg.cholesky(params.r_at(k))
        obs[k - 1] = params.h_at(k) @ states[k] + Lrk @ rng.standard_normal(Ny)
    return Trajectory(states=states, observations=obs, seed=seed)


def kalman_filter(params: ModelParams, A: np.ndarray, observations: np.ndarray) -> FilterOutput:
    """Run the forward recursion over the observation sequence.

    Raises :class:`InnovationError` naming the step if an innovation
    covariance cannot be Cholesky-factored.
    """
    params.validate()
    A = np.ascontiguousarray(A, dtype=float)
    Y = np.ascontiguousarray(observations, dtype=float)
    if Y.shape != (params.K, params.Ny):
        raise ValueError(f"observations have shape {Y.shape}, expected {(params.K, params.Ny)}")

    status, m_pred, P_pred, m_filt, P_filt, innov, S, gains = kernels().filter_loop(
        A,
        np.ascontiguousarray(params.Q),
        np.ascontiguousarray(params.H),
        np.ascontiguousarray(params.R),
        np.ascontiguousarray(params.x0_mean),
        np.ascontiguousarray(params.P0),
        Y,
    )
    if status != -1:
        raise InnovationError(status)
    return FilterOutput(m_pred, P_pred, m_filt, P_filt, innov, S, gains)


def rts_smoother(params: ModelParams, A: np.ndarray, filt: FilterOutput) -> SmootherOutput:
    """Run the backward recursion on a filter output produced with (params, A)."""
    A = np.ascontiguousarray(A, dtype=float)
    status, jitter_count, m_smooth, P_smooth, G = kernels().smoother_loop(
        A,
        np.ascontiguousarray(params.Q),
        np.ascontiguousarray(filt.m_filt),
        np.ascontiguousarray(filt.P_filt),
    )
    if status != -1:
        raise np.linalg.LinAlgError(
            f"predicted covariance at step {status + 1} is singular even after jitter"
        )
    if jitter_count:
        warnings.warn(
            f"smoother added diagonal jitter at {jitter_count} step(s)",
            RuntimeWarning,
            stacklevel=2,
        )
    return SmootherOutput(m_smooth, P_smooth, G, jitter_steps=jitter_count)


def neg_log_likelihood(filt: FilterOutput) -> float:
    """Negative log-evidence -log p(y_1:K | A) from the innovation sequence.

    Equals sum_k [ 0.5 log|2 pi S_k| + 0.5 v_k^T S_k^{-1} v_k ].
    """
    S = filt.S
    v = filt.innovations
    K, Ny = v.shape
    L = np.linalg.cholesky(S)
    z = np.linalg.solve(L, v[..., None])[..., 0]
    quad = np.einsum("ki,ki->k", z, z)
    logdet = 2.0 * np.log(np.einsum("kii->ki", L)).sum(axis=1)
    return float(0.5 * np.sum(logdet + quad + Ny * np.log(2.0 * np.pi)))

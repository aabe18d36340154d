"""Granger-causality edge detectors (pairwise and conditional).

Both detectors fit restricted/unrestricted least-squares autoregressions
per target series and declare an edge when the F-test on the residual
variance reduction rejects at level alpha:

* pairwise (PGC): target's own lags vs own + candidate's lags;
* conditional (CGC): all series' lags except the candidate vs all lags.

Edge orientation follows the transition-matrix convention: adjacency[i, j]
is True when series j helps predict series i.  Diagonal entries are set
True (self-edges are not tested).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


@dataclass
class GrangerConfig:
    ar_order: int = 1
    alpha: float = 0.05
    mode: str = "pgc"

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in ("pgc", "cgc"):
            raise ValueError(f"mode must be 'pgc' or 'cgc', got {self.mode!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.ar_order < 1:
            raise ValueError("ar_order must be a positive integer")


def _lagged(Y: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Targets (n, Nx) and lag regressors (n, Nx, p) with n = K - p rows."""
    K = Y.shape[0]
    targets = Y[p:]
    lags = np.stack([Y[p - l:K - l] for l in range(1, p + 1)], axis=2)
    return targets, lags


def _rss(y: np.ndarray, X: np.ndarray) -> tuple[float, bool]:
    """Least-squares residual sum of squares and a full-rank flag."""
    sol, res, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    full_rank = rank == X.shape[1]
    r = y - X @ sol
    return float(r @ r), full_rank


def granger_graph(observations: np.ndarray, cfg: GrangerConfig | None = None) -> np.ndarray:
    """Boolean adjacency of detected directed edges among the series."""
    if cfg is None:
        cfg = GrangerConfig()
    Y = np.asarray(observations, dtype=float)
    K, Nx = Y.shape
    p = cfg.ar_order
    if K <= 10 * Nx * p:
        raise ValueError(f"series too short: K={K} must exceed 10*Nx*ar_order={10 * Nx * p}")

    adj = np.eye(Nx, dtype=bool)
    if Nx == 1:
        return adj

    targets, lags = _lagged(Y, p)
    n = targets.shape[0]
    ones = np.ones((n, 1))

    for i in range(Nx):
        y = targets[:, i]
        for j in range(Nx):
            if i == j:
                continue
            if cfg.mode == "pgc":
                restricted = np.hstack([lags[:, i, :], ones])
                unrestricted = np.hstack([lags[:, i, :], lags[:, j, :], ones])
            else:
                keep = [c for c in range(Nx) if c != j]
                restricted = np.hstack([lags[:, keep, :].reshape(n, -1), ones])
                unrestricted = np.hstack([lags.reshape(n, -1), ones])

            rss_r, ok_r = _rss(y, restricted)
            rss_u, ok_u = _rss(y, unrestricted)
            if not (ok_r and ok_u):
                warnings.warn(
                    f"rank-deficient regression for pair ({j} -> {i}); edge undeclared",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue

            df2 = n - unrestricted.shape[1]
            if df2 <= 0:
                warnings.warn(
                    f"not enough samples for pair ({j} -> {i}); edge undeclared",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            if rss_u <= 0.0:
                # perfect unrestricted fit: declare only on strict improvement
                adj[i, j] = rss_r > 0.0
                continue
            f_stat = ((rss_r - rss_u) / p) / (rss_u / df2)
            p_val = sps.f.sf(f_stat, p, df2)
            adj[i, j] = p_val < cfg.alpha
    return adj

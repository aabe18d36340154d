"""Outer EM loop: alternate smoothing-based E-steps with prox M-steps.

Four method variants share the loop and differ only in the M-step:

* ``GraphEM``   : stability constraint + weighted L1 (or block L21) prior,
                  solved with the consensus primal-dual solver; the
                  sparsity term sits on the output branch so iterates
                  carry exact zeros.
* ``StableEM``  : stability constraint only (Zero output branch), with a
                  final spectral projection at acceptance.
* ``OracleEM``  : known-support projection on the output branch.
* ``MLEM``      : closed-form unregularized update.

The loop stops when |A^(i+1) - A^(i)|_F <= epsilon * |A^(i)|_F or after
``max_em_iters`` M-steps.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .estep import estep_stats
from .metrics import detection, rmse
from .mstep import MsConfig, closed_form_mstep, ms_solve
from .prox import PenaltyTerm, Regularizer, project_constraint
from .ssm import (
    InnovationError,
    ModelParams,
    SmootherOutput,
    kalman_filter,
    neg_log_likelihood,
    rts_smoother,
)

logger = logging.getLogger("graphem.em")

METHODS = ("GraphEM", "StableEM", "OracleEM", "MLEM")


@dataclass
class FitConfig:
    """EM settings; method-specific fields are ignored by other methods."""

    method: str = "GraphEM"
    kappa: float = 1.0
    delta: float = 0.99
    epsilon: float = 1e-3
    xi: float = 1e-4
    max_em_iters: int = 200
    init_seed: int = 0
    a_init: np.ndarray | None = None
    support_mask: np.ndarray | None = None
    penalty: str = "l1"
    block_map: np.ndarray | None = None
    ms_lambda: float | None = None
    ms_gamma: float | None = None
    ms_max_iters: int = 50000

    def __post_init__(self):
        canon = {m.lower(): m for m in METHODS}
        key = str(self.method).lower()
        if key not in canon:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        self.method = canon[key]
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.epsilon <= 0 or self.xi <= 0:
            raise ValueError("epsilon and xi must be positive")
        if self.penalty not in ("l1", "l21"):
            raise ValueError(f"penalty must be 'l1' or 'l21', got {self.penalty!r}")


@dataclass
class FitResult:
    """Estimate plus the per-iteration traces of one EM run."""

    A_hat: np.ndarray
    loss_trace: np.ndarray
    em_iters: int
    converged: bool
    smoother: SmootherOutput
    rmse_trace: np.ndarray | None = None
    ms_not_converged: int = 0
    method: str = ""


def init_matrix(Nx: int, seed: int, delta: float) -> np.ndarray:
    """Random stable diagonal first-order matrix, projected to |.|_2 <= delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    A0 = np.diag(rng.uniform(0.0, 1.0, size=Nx))
    return project_constraint(PenaltyTerm.spectral_ball(delta), A0)


def build_regularizer(cfg: FitConfig, Nx: int) -> Regularizer | None:
    """Prior term list for a method; None for MLEM (closed form)."""
    if cfg.method == "MLEM":
        return None
    if cfg.method == "StableEM":
        return Regularizer([PenaltyTerm.spectral_ball(cfg.delta), PenaltyTerm.zero()])
    if cfg.method == "OracleEM":
        if cfg.support_mask is None:
            raise ValueError("OracleEM requires a support_mask")
        mask = np.asarray(cfg.support_mask, dtype=bool)
        if mask.shape != (Nx, Nx):
            raise ValueError(f"support_mask has shape {mask.shape}, expected ({Nx}, {Nx})")
        return Regularizer([PenaltyTerm.support_mask(mask)])
    # GraphEM
    if cfg.penalty == "l1":
        sparsity = PenaltyTerm.l1(cfg.kappa)
    else:
        if cfg.block_map is None:
            raise ValueError("penalty 'l21' requires a block_map")
        sparsity = PenaltyTerm.block_l21(cfg.kappa, cfg.block_map)
    return Regularizer([PenaltyTerm.spectral_ball(cfg.delta), sparsity])


def fit(
    params: ModelParams,
    observations: np.ndarray,
    cfg: FitConfig,
    a_true: np.ndarray | None = None,
) -> FitResult:
    """Run the EM estimation of the transition matrix.

    ``a_true`` is only used to record an RMSE trace alongside the loss
    trace; it never influences the estimate (OracleEM's support mask comes
    from the config, not from here).
    """
    Y = np.asarray(observations, dtype=float)
    Nx = params.Nx
    reg = build_regularizer(cfg, Nx)
    ms_cfg = MsConfig(lam=cfg.ms_lambda, gamma=cfg.ms_gamma, xi=cfg.xi, max_iters=cfg.ms_max_iters)

    A = np.array(cfg.a_init, dtype=float) if cfg.a_init is not None \
        else init_matrix(Nx, cfg.init_seed, cfg.delta)

    losses: list[float] = []
    rmses: list[float] = []
    ms_flags = 0
    converged = False
    em_iters = 0
    filt = smooth = None

    for i in range(cfg.max_em_iters + 1):
        try:
            filt = kalman_filter(params, A, Y)
        except InnovationError as exc:
            raise RuntimeError(f"filter failed at EM iteration {i}: {exc}") from exc
        smooth = rts_smoother(params, A, filt)
        losses.append(neg_log_likelihood(filt) + (reg.value(A) if reg is not None else 0.0))
        if a_true is not None:
            rmses.append(rmse(A, a_true))
        if converged or i == cfg.max_em_iters:
            break

        stats = estep_stats(smooth, a_ref=A)
        if cfg.method == "MLEM":
            A_new = closed_form_mstep(stats)
        else:
            res = ms_solve(stats, params.Q, reg, A_init=A, cfg=ms_cfg)
            A_new = res.A
            if not res.converged:
                ms_flags += 1
                warnings.warn(
                    f"M-step did not converge at EM iteration {i}; continuing with best iterate",
                    RuntimeWarning,
                    stacklevel=2,
                )
        if cfg.method == "StableEM":
            A_new = project_constraint(PenaltyTerm.spectral_ball(cfg.delta), A_new)
        elif cfg.method == "GraphEM":
            # radial rescale keeps the exact-zero pattern while guaranteeing a
            # stable matrix for the next forward pass
            s = np.linalg.norm(A_new, 2)
            if s > cfg.delta:
                A_new = A_new * (cfg.delta / s)

        diff = np.linalg.norm(A_new - A)
        ref = np.linalg.norm(A)
        em_iters += 1
        logger.debug("EM iter %d: loss=%.6g, step=%.3e", i, losses[-1], diff)
        A = A_new
        if diff <= cfg.epsilon * ref:
            converged = True

    return FitResult(
        A_hat=A,
        loss_trace=np.asarray(losses),
        em_iters=em_iters,
        converged=converged,
        smoother=smooth,
        rmse_trace=np.asarray(rmses) if a_true is not None else None,
        ms_not_converged=ms_flags,
        method=cfg.method,
    )


def select_kappa(
    params: ModelParams,
    observations: np.ndarray,
    cfg: FitConfig,
    kappas,
    a_true: np.ndarray,
) -> tuple[float, dict]:
    """Grid-search helper: pick the weight maximizing detection accuracy.

    Requires the ground truth; ties go to the smallest weight.
    """
    scores: dict[float, float] = {}
    for kappa in kappas:
        res = fit(params, observations, replace(cfg, kappa=float(kappa)))
        scores[float(kappa)] = detection(res.A_hat, a_true).accuracy
    best = max(sorted(scores), key=lambda k: scores[k])
    return best, scores

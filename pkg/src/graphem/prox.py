"""Proximity operators and projections used by the M-step solver.

Two families are provided:

* penalty terms (L1, BlockL21, Gaussian, ElasticNet, Zero) whose prox at
  scale theta has a closed form with effective threshold theta*kappa;
* constraint sets (SpectralBall, BoxRange, FrobeniusBall, SupportMask)
  whose prox is the Euclidean projection, independent of theta.

plus the prox of the quadratic data-fit term, which solves a small
Sylvester equation (or a single SPD solve when Q is isotropic).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_sylvester

from .estep import EStepStats

PENALTY_KINDS = ("L1", "BlockL21", "Gaussian", "ElasticNet", "Zero")
CONSTRAINT_KINDS = ("SpectralBall", "BoxRange", "FrobeniusBall", "SupportMask")

# relative slack when evaluating hard constraints, so matrices sitting on a
# ball boundary after projection do not flip to +inf through rounding
_FEAS_RTOL = 1e-9


@dataclass
class PenaltyTerm:
    """One additive term of the prior: a weighted penalty or a constraint set."""

    kind: str
    weight: float = 0.0
    delta: float = 0.0
    a_min: float = 0.0
    a_max: float = 0.0
    block_map: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS + CONSTRAINT_KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind in ("L1", "BlockL21", "Gaussian", "ElasticNet") and self.weight < 0:
            raise ValueError("penalty weight must be nonnegative")
        if self.kind in ("SpectralBall", "FrobeniusBall") and self.delta <= 0:
            raise ValueError("ball radius must be positive")
        if self.kind == "BoxRange" and self.a_min > self.a_max:
            raise ValueError("BoxRange requires a_min <= a_max")
        if self.kind == "BlockL21":
            if self.block_map is None:
                raise ValueError("BlockL21 requires a block_map")
            self.block_map = np.asarray(self.block_map, dtype=np.intp)
            counts = np.bincount(self.block_map.ravel())
            if counts.min() == 0 or counts.max() != counts.min():
                raise ValueError("block_map must cover all entries with equal-size blocks")
        if self.kind == "SupportMask":
            if self.mask is None:
                raise ValueError("SupportMask requires a mask")
            self.mask = np.asarray(self.mask, dtype=bool)

    # -- constructors -------------------------------------------------
    @classmethod
    def l1(cls, kappa: float) -> "PenaltyTerm":
        return cls("L1", weight=kappa)

    @classmethod
    def block_l21(cls, kappa: float, block_map: np.ndarray) -> "PenaltyTerm":
        return cls("BlockL21", weight=kappa, block_map=block_map)

    @classmethod
    def gaussian(cls, kappa: float) -> "PenaltyTerm":
        return cls("Gaussian", weight=kappa)

    @classmethod
    def elastic_net(cls, kappa: float) -> "PenaltyTerm":
        return cls("ElasticNet", weight=kappa)

    @classmethod
    def zero(cls) -> "PenaltyTerm":
        return cls("Zero")

    @classmethod
    def spectral_ball(cls, delta: float) -> "PenaltyTerm":
        return cls("SpectralBall", delta=delta)

    @classmethod
    def box(cls, a_min: float, a_max: float) -> "PenaltyTerm":
        return cls("BoxRange", a_min=a_min, a_max=a_max)

    @classmethod
    def frobenius_ball(cls, delta: float) -> "PenaltyTerm":
        return cls("FrobeniusBall", delta=delta)

    @classmethod
    def support_mask(cls, mask: np.ndarray) -> "PenaltyTerm":
        return cls("SupportMask", mask=mask)

    # -- behaviour ----------------------------------------------------
    @property
    def is_constraint(self) -> bool:
        return self.kind in CONSTRAINT_KINDS

    def value(self, A: np.ndarray) -> float:
        """Term value at A; constraints return 0 or +inf."""
        A = np.asarray(A, dtype=float)
        k = self.kind
        if k == "L1":
            return self.weight * float(np.abs(A).sum())
        if k == "BlockL21":
            sq = np.bincount(self.block_map.ravel(), weights=(A * A).ravel())
            return self.weight * float(np.sqrt(sq).sum())
        if k == "Gaussian":
            return self.weight * 0.5 * float((A * A).sum())
        if k == "ElasticNet":
            return self.weight * float(np.abs(A).sum() + 0.5 * (A * A).sum())
        if k == "Zero":
            return 0.0
        if k == "SpectralBall":
            s = np.linalg.norm(A, 2)
            return 0.0 if s <= self.delta * (1.0 + _FEAS_RTOL) else float("inf")
        if k == "FrobeniusBall":
            s = np.linalg.norm(A, "fro")
            return 0.0 if s <= self.delta * (1.0 + _FEAS_RTOL) else float("inf")
        if k == "BoxRange":
            lo, hi = self.a_min, self.a_max
            tol = _FEAS_RTOL * max(1.0, abs(lo), abs(hi))
            ok = np.all(A >= lo - tol) and np.all(A <= hi + tol)
            return 0.0 if ok else float("inf")
        if k == "SupportMask":
            off = A[~self.mask]
            lim = _FEAS_RTOL * max(1.0, float(np.abs(A).max(initial=0.0)))
            return 0.0 if (off.size == 0 or np.abs(off).max(initial=0.0) <= lim) else float("inf")
        raise ValueError(f"unknown term kind {k!r}")

    def prox(self, A: np.ndarray, theta: float) -> np.ndarray:
        """prox of theta*f at A (projection for constraint kinds)."""
        if self.is_constraint:
            return project_constraint(self, A)
        return prox_penalty(self, A, theta)


def prox_penalty(term: PenaltyTerm, A: np.ndarray, theta: float) -> np.ndarray:
    """Closed-form prox of a penalty term at scale theta > 0."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if term.is_constraint:
        raise ValueError(f"{term.kind} is a constraint; use project_constraint")
    A = np.asarray(A, dtype=float)
    t = theta * term.weight
    k = term.kind
    if k == "L1":
        return np.sign(A) * np.maximum(np.abs(A) - t, 0.0)
    if k == "BlockL21":
        ids = term.block_map.ravel()
        norms = np.sqrt(np.bincount(ids, weights=(A * A).ravel()))
        scale = 1.0 - t / np.maximum(norms, t if t > 0 else 1.0)
        out = (A.ravel() * scale[ids]).reshape(A.shape)
        dead = scale <= 0.0
        if dead.any():
            out.ravel()[dead[ids]] = 0.0
        return out
    if k == "Gaussian":
        return A / (1.0 + t)
    if k == "ElasticNet":
        return np.sign(A) * np.maximum(np.abs(A) - t, 0.0) / (1.0 + t)
    if k == "Zero":
        return A.copy()
    raise ValueError(f"unknown penalty kind {k!r}")


def project_constraint(term: PenaltyTerm, A: np.ndarray) -> np.ndarray:
    """Euclidean projection onto a constraint set."""
    if not term.is_constraint:
        raise ValueError(f"{term.kind} is a penalty; use prox_penalty")
    A = np.asarray(A, dtype=float)
    k = term.kind
    if k == "SpectralBall":
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        if s[0] <= term.delta:
            return A.copy()
        return (U * np.minimum(s, term.delta)) @ Vt
    if k == "BoxRange":
        return np.clip(A, term.a_min, term.a_max)
    if k == "FrobeniusBall":
        nrm = np.linalg.norm(A, "fro")
        if nrm <= term.delta:
            return A.copy()
        return A * (term.delta / nrm)
    if k == "SupportMask":
        out = A.copy()
        out[~term.mask] = 0.0
        return out
    raise ValueError(f"unknown constraint kind {k!r}")


@dataclass
class Regularizer:
    """Ordered prior terms; the last one is the designated output branch.

    The M-step solver evaluates the last term's prox on its output branch,
    so putting a sparsity-carrying term (L1/BlockL21/SupportMask) there
    makes the returned matrix structurally sparse.
    """

    terms: list[PenaltyTerm] = field(default_factory=list)

    def __post_init__(self):
        self.terms = list(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def sparsity_term(self) -> PenaltyTerm:
        if not self.terms:
            raise ValueError("regularizer has no terms")
        return self.terms[-1]

    def value(self, A: np.ndarray) -> float:
        return float(sum(t.value(A) for t in self.terms))

    def finite_value(self, A: np.ndarray) -> float:
        """Penalty part only; constraint indicators contribute 0."""
        return float(sum(t.value(A) for t in self.terms if not t.is_constraint))


def prox_quadratic(
    A: np.ndarray,
    theta: float,
    stats: EStepStats,
    Q: np.ndarray,
    solver: str = "auto",
) -> np.ndarray:
    """Prox of the quadratic data-fit term at scale theta.

    Solves theta*Q^{-1} X + X Phi^{-1} = A Phi^{-1} + theta*Q^{-1} Delta Phi^{-1}
    (a Sylvester equation); for isotropic Q = sigma^2 I this reduces to

        X = (theta/sigma^2 Delta + A) (theta/sigma^2 Phi + I)^{-1}.

    ``solver`` is one of 'auto', 'isotropic', 'sylvester'.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = A.shape[0]

    iso = Q.shape == (n, n) and np.count_nonzero(Q - np.diag(np.diag(Q))) == 0 \
        and np.ptp(np.diag(Q)) == 0.0
    if solver == "auto":
        solver = "isotropic" if iso else "sylvester"
    elif solver == "isotropic" and not iso:
        raise ValueError("isotropic solver requested but Q is not sigma^2*I")

    if solver == "isotropic":
        c = theta / Q[0, 0]
        M = c * stats.Phi + np.eye(n)
        cf = cho_factor(M, lower=True)
        # X M = c*Delta + A  =>  M X^T = (c*Delta + A)^T
        return cho_solve(cf, (c * stats.Delta + A).T).T
    if solver == "sylvester":
        Phi_inv = _spd_inverse(stats.Phi, "Phi")
        Q_inv = _spd_inverse(Q, "Q")
        Z = A @ Phi_inv + theta * Q_inv @ stats.Delta @ Phi_inv
        return solve_sylvester(theta * Q_inv, Phi_inv, Z)
    raise ValueError(f"unknown solver {solver!r}")


def _spd_inverse(M: np.ndarray, name: str) -> np.ndarray:
    """Inverse of an SPD matrix via Cholesky, with one jittered retry."""
    n = M.shape[0]
    try:
        cf = cho_factor(M, lower=True)
    except np.linalg.LinAlgError:
        jit = 1e-10 * np.trace(M) / n
        try:
            cf = cho_factor(M + jit * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(f"{name} is singular even after jitter") from None
    return cho_solve(cf, np.eye(n))

"""Scoring of estimated transition matrices against a ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DETECTION_THRESHOLD = 1e-10


@dataclass
class DetectionScores:
    """Confusion-matrix scores over all Nx^2 entries.

    An entry is "positive" when its magnitude exceeds the threshold.
    Empty-denominator ratios are vacuously 1.0 (a perfect estimate of a
    fully dense truth scores 1 across the board); f1 is 0 when
    precision + recall is 0.
    """

    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    threshold: float = DETECTION_THRESHOLD


def rmse(A_hat: np.ndarray, A_true: np.ndarray) -> float:
    """Relative Frobenius error |A_hat - A_true|_F / |A_true|_F."""
    A_hat = np.asarray(A_hat, dtype=float)
    A_true = np.asarray(A_true, dtype=float)
    if A_hat.shape != A_true.shape:
        raise ValueError(f"shape mismatch: {A_hat.shape} vs {A_true.shape}")
    denom = np.linalg.norm(A_true)
    if denom == 0.0:
        raise ValueError("A_true is the zero matrix; relative error undefined")
    return float(np.linalg.norm(A_hat - A_true) / denom)


def _ratio(num: int, den: int) -> float:
    return float(num) / den if den > 0 else 1.0


def detection(A_hat: np.ndarray, A_true: np.ndarray, threshold: float = DETECTION_THRESHOLD) -> DetectionScores:
    """Edge-detection scores of the estimated support against the true one."""
    A_hat = np.asarray(A_hat, dtype=float)
    A_true = np.asarray(A_true, dtype=float)
    if A_hat.shape != A_true.shape:
        raise ValueError(f"shape mismatch: {A_hat.shape} vs {A_true.shape}")
    pred = np.abs(A_hat) > threshold
    true = np.abs(A_true) > threshold

    tp = int(np.sum(pred & true))
    tn = int(np.sum(~pred & ~true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))

    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return DetectionScores(
        accuracy=_ratio(tp + tn, tp + tn + fp + fn),
        precision=precision,
        recall=recall,
        specificity=_ratio(tn, tn + fp),
        f1=2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0,
        threshold=threshold,
    )

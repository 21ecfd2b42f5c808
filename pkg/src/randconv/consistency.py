"""Softmax, cross-entropy and the multi-sample KL consistency loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class PredictionDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).copy()
        if p.ndim != 1 or p.size == 0:
            raise ValueError("a prediction is a non-empty 1-d probability vector")
        if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("probabilities must lie in [0, 1] and sum to 1")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    consistency: float
    lam: float
    total: float


def _probs(x) -> np.ndarray:
    if isinstance(x, PredictionDistribution):
        return x.probs
    return np.asarray(x, dtype=np.float64)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits: Sequence[float]) -> PredictionDistribution:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return PredictionDistribution(softmax_rows(z))


def kl_divergence(p, q) -> float:
    """KL(p || q) with both arguments floored at 1e-12 inside the log."""
    p, q = _probs(p), _probs(q)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    pf = np.maximum(p, PROB_FLOOR)
    qf = np.maximum(q, PROB_FLOOR)
    return max(float(np.sum(p * (np.log(pf) - np.log(qf)))), 0.0)


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    pf = np.maximum(p, PROB_FLOOR)
    qf = np.maximum(q, PROB_FLOOR)
    return np.sum(p * (np.log(pf) - np.log(qf)), axis=-1)


def sample_mean(stacked: np.ndarray) -> np.ndarray:
    """Mean over axis 0, summed in sorted order so sample order is irrelevant."""
    return np.sort(stacked, axis=0).sum(axis=0) / stacked.shape[0]


def consistency_loss(preds: Sequence) -> float:
    """Sum over samples of KL(sample || mean of samples)."""
    if len(preds) < 2:
        raise ValueError("consistency loss needs at least two predictions")
    stacked = np.stack([_probs(p) for p in preds])
    mean = sample_mean(stacked)
    terms = _kl_rows(stacked, mean[None, :])
    return max(float(np.sort(terms).sum()), 0.0)


def batch_consistency(probs: np.ndarray) -> np.ndarray:
    """Per-image consistency for ``probs`` of shape ``(samples, batch, classes)``."""
    mean = sample_mean(probs)
    return np.sort(_kl_rows(probs, mean[None]), axis=0).sum(axis=0)


def cross_entropy(pred, label: int) -> float:
    p = _probs(pred)
    if not 0 <= label < p.size:
        raise ValueError(f"label {label} out of range for {p.size} classes")
    return float(-np.log(max(p[label], PROB_FLOOR)))


def total_loss(pred1, label: int, cons: float, lam: float, lambda_squared: bool = False) -> LossBreakdown:
    """Task loss on the first sample plus ``lam`` times the consistency term.

    ``lambda_squared`` applies ``lam`` twice: the consistency term is
    pre-scaled by ``lam`` (and reported that way) before the outer weight.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    task = cross_entropy(pred1, label)
    cons = float(cons) * lam if lambda_squared else float(cons)
    return LossBreakdown(task, cons, float(lam), task + lam * cons)

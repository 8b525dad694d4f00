"""Classification losses returning (value, gradient wrt logits)."""

from __future__ import annotations

import numpy as np

from ..errors import DataError, NumericError


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(np.asarray(logits)))


def _check_logits(logits):
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise DataError(f"logits must be 2-D, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    return logits


def cross_entropy_loss(logits, labels):
    """Mean negative log-likelihood of integer labels."""
    logits = _check_logits(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise DataError(f"labels must be {n} integers in [0, {c})")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def soft_target_loss(student_logits, teacher_probs):
    """Cross entropy of the student softmax against teacher probabilities."""
    logits = _check_logits(student_logits)
    probs = np.asarray(teacher_probs, dtype=logits.dtype)
    if probs.shape != logits.shape:
        raise DataError(f"teacher_probs shape {probs.shape} != logits shape {logits.shape}")
    if (
        not np.all(np.isfinite(probs))
        or probs.min() < 0
        or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-5
    ):
        raise DataError("teacher_probs rows must be non-negative and sum to 1")
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -(probs * logp).sum(axis=1).mean()
    grad = (np.exp(logp) - probs) / n
    return float(loss), grad

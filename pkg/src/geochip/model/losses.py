"""Task and distillation losses over (B, K, H, W) logits."""

from __future__ import annotations

import numpy as np

from geochip.errors import DataError
from geochip.model.tensor import Tensor, log_softmax

IGNORE = 255


def _scored_mask(labels: np.ndarray, ignore: int) -> np.ndarray:
    return labels != ignore


def ce_loss(logits: Tensor, labels: np.ndarray, ignore: int = IGNORE) -> Tensor:
    """Mean softmax cross-entropy over non-ignored pixels."""
    b, k, h, w = logits.shape
    if labels.shape != (b, h, w):
        raise DataError(f"labels shape {labels.shape} != expected {(b, h, w)}")
    mask = _scored_mask(labels, ignore)
    n_scored = int(mask.sum())
    if n_scored == 0:
        raise DataError("no scored pixels: every label is the ignore value")

    safe = np.where(mask, labels, 0).astype(np.int64)
    onehot = np.zeros((b, k, h, w), dtype=logits.dtype)
    np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
    onehot *= mask[:, None]

    logp = log_softmax(logits, axis=1)
    picked = (logp * Tensor(onehot)).sum()
    return -picked * (1.0 / n_scored)


def kl_distill_loss(student_logits: Tensor, teacher_logits: np.ndarray,
                    temperature: float, ignore_mask: np.ndarray | None = None) -> Tensor:
    """Temperature-scaled KL(teacher || student) per pixel, averaged, times tau^2.

    teacher_logits is a plain array (the teacher is frozen). ignore_mask, when
    given, marks pixels as (B, H, W) True = scored.
    """
    if temperature <= 0:
        raise DataError("temperature must be > 0")
    b, k, h, w = student_logits.shape
    tau = float(temperature)

    t_scaled = teacher_logits / tau
    t_shift = t_scaled - t_scaled.max(axis=1, keepdims=True)
    t_exp = np.exp(t_shift)
    t_prob = t_exp / t_exp.sum(axis=1, keepdims=True)
    t_logp = t_shift - np.log(t_exp.sum(axis=1, keepdims=True))

    if ignore_mask is None:
        mask = np.ones((b, h, w), dtype=bool)
    else:
        mask = ignore_mask.astype(bool)
    n_scored = int(mask.sum())
    if n_scored == 0:
        return Tensor(np.zeros((), dtype=student_logits.dtype))

    s_logp = log_softmax(student_logits * (1.0 / tau), axis=1)
    weights = t_prob * mask[:, None]
    crossent = (s_logp * Tensor(weights.astype(np.float64 if
                                               student_logits.dtype == np.float64
                                               else np.float32))).sum()
    teacher_entropy_term = float((t_prob * t_logp * mask[:, None]).sum())
    kl = Tensor(np.asarray(teacher_entropy_term, dtype=student_logits.dtype)) - crossent
    return kl * (tau * tau / n_scored)

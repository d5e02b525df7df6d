"""Segmentation evaluation: confusion matrix, mIoU/mAcc/mF1, rank-based ROC-AUC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from geochip.errors import DataError

IGNORE = 255


@dataclass
class ConfusionMatrix:
    """counts[reference, predicted] over scored pixels."""

    counts: np.ndarray

    def __post_init__(self):
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise DataError("confusion matrix must be square")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    miou: float
    macc: float
    mf1: float
    per_class_iou: dict[int, float] = field(default_factory=dict)
    per_class_f1: dict[int, float] = field(default_factory=dict)
    roc_auc: float | None = None

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "macc": self.macc,
            "mf1": self.mf1,
            "per_class_iou": {str(k): v for k, v in self.per_class_iou.items()},
            "per_class_f1": {str(k): v for k, v in self.per_class_f1.items()},
            "roc_auc": self.roc_auc,
        }


def confusion_matrix(pred: np.ndarray, ref: np.ndarray, num_classes: int,
                     ignore: int = IGNORE) -> ConfusionMatrix:
    if pred.shape != ref.shape:
        raise DataError(f"shape mismatch: pred {pred.shape} vs ref {ref.shape}")
    mask = ref != ignore
    if not mask.any():
        raise DataError("no scored pixels")
    p = pred[mask].astype(np.int64)
    r = ref[mask].astype(np.int64)
    if (p < 0).any() or (p >= num_classes).any():
        raise DataError("prediction contains class ids outside [0, num_classes)")
    if (r < 0).any() or (r >= num_classes).any():
        raise DataError("reference contains class ids outside [0, num_classes)")
    flat = np.bincount(r * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(flat.reshape(num_classes, num_classes))


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    """IoU_k = TP/(TP+FP+FN); F1_k = 2TP/(2TP+FP+FN); means over classes
    present in the reference; mAcc = trace/total."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fn = counts.sum(axis=1) - tp
    fp = counts.sum(axis=0) - tp
    present = counts.sum(axis=1) > 0

    per_iou: dict[int, float] = {}
    per_f1: dict[int, float] = {}
    for k in np.flatnonzero(present):
        denom_iou = tp[k] + fp[k] + fn[k]
        denom_f1 = 2 * tp[k] + fp[k] + fn[k]
        per_iou[int(k)] = float(tp[k] / denom_iou) if denom_iou else 0.0
        per_f1[int(k)] = float(2 * tp[k] / denom_f1) if denom_f1 else 0.0

    miou = float(np.mean(list(per_iou.values()))) if per_iou else 0.0
    mf1 = float(np.mean(list(per_f1.values()))) if per_f1 else 0.0
    macc = float(tp.sum() / cm.total)
    return MetricsReport(miou=miou, macc=macc, mf1=mf1,
                         per_class_iou=per_iou, per_class_f1=per_f1)


def confusion_and_metrics(pred: np.ndarray, ref: np.ndarray, num_classes: int,
                          ignore: int = IGNORE) -> tuple[ConfusionMatrix, MetricsReport]:
    cm = confusion_matrix(pred, ref, num_classes, ignore)
    return cm, metrics_from_confusion(cm)


def _rank_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mann-Whitney AUC with average-rank tie handling."""
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    # average ranks over tied runs (1-based)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[positives].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_auc(scores: np.ndarray, ref: np.ndarray, ignore: int = IGNORE) -> float:
    """Binary: scores = positive-class probability, same shape as ref.
    Multiclass: scores has a leading class axis; macro one-vs-rest average
    over classes present with both positives and negatives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    ref = np.asarray(ref)
    if scores.shape == ref.shape:
        mask = (ref != ignore).ravel()
        s = scores.ravel()[mask]
        r = ref.ravel()[mask]
        if s.size and (s.min() < 0 or s.max() > 1):
            raise DataError("scores must lie in [0, 1]")
        positives = r == 1
        if positives.all() or not positives.any():
            raise DataError("binary ROC-AUC needs both positives and negatives")
        return _rank_auc(s, positives)

    if scores.ndim != ref.ndim + 1 or scores.shape[1:] != ref.shape:
        raise DataError(f"scores shape {scores.shape} incompatible with ref {ref.shape}")
    if scores.size and (scores.min() < 0 or scores.max() > 1):
        raise DataError("scores must lie in [0, 1]")
    mask = (ref != ignore).ravel()
    if not mask.any():
        raise DataError("no scored pixels")
    flat_ref = ref.ravel()[mask]
    aucs = []
    for k in np.unique(flat_ref):
        positives = flat_ref == k
        if positives.all() or not positives.any():
            continue  # class without both sides is skipped
        s = scores[int(k)].ravel()[mask]
        aucs.append(_rank_auc(s, positives))
    if not aucs:
        raise DataError("no class had both positives and negatives")
    return float(np.mean(aucs))

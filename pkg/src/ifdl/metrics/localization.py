from __future__ import annotations

import math

import numpy as np


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def pixel_iou(pred, gt) -> float:
    """|pred ∩ gt| / |pred ∪ gt|; 1.0 when both masks are empty."""
    pred, gt = _pair(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def pixel_f1(pred, gt) -> float:
    """2|pred ∩ gt| / (|pred| + |gt|); 1.0 when both masks are empty."""
    pred, gt = _pair(pred, gt)
    total = np.count_nonzero(pred) + np.count_nonzero(gt)
    if total == 0:
        return 1.0
    return 2 * np.count_nonzero(pred & gt) / total


class UndefinedMetric(ValueError):
    """Metric has no value for this input (e.g. AUC on a single-class mask)."""


def pixel_auc(probs, gt) -> float:
    """ROC-AUC from the Mann-Whitney rank statistic; tied scores count one half."""
    probs = np.asarray(probs, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if probs.shape != gt.shape:
        raise ValueError(f"score map {probs.shape} does not match mask {gt.shape}")
    n_pos = int(np.count_nonzero(gt))
    n_neg = gt.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs at least one tampered and one authentic pixel")
    # tie-averaged ranks: a group of equal scores shares the mean of its positions
    _, inverse, counts = np.unique(probs.ravel(), return_inverse=True, return_counts=True)
    avg_rank = np.cumsum(counts) - (counts - 1) / 2
    rank_sum = avg_rank[inverse.ravel()][gt.ravel()].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def exact_mean(values) -> float | None:
    """Correctly rounded mean (fsum), independent of summation order; None when empty."""
    values = [float(v) for v in values]
    return math.fsum(values) / len(values) if values else None


def localization_summary(records: list[dict]) -> dict:
    """Dataset means of per-image IoU/F1/AUC; images without a defined AUC are skipped for AUC only."""
    ious = [r["iou"] for r in records]
    f1s = [r["f1"] for r in records]
    aucs = [r["auc"] for r in records if r.get("auc") is not None]
    return {
        "n": len(records),
        "iou": exact_mean(ious),
        "f1": exact_mean(f1s),
        "auc": exact_mean(aucs),
        "auc_n": len(aucs),
        "auc_skipped": len(records) - len(aucs),
    }

"""
Accuracy, batched prediction and bucketed calibration analysis
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from utils.data_models import CalibrationBucket, CalibrationReport, Mode, NormStats
from .augment import normalize
from .data import GraspDataset
from .errors import ContractError, DimensionError
from .model import Model, forward

logger = logging.getLogger(__name__)

DECISION_THRESHOLD = 0.5


def _check_pair(probs, labels):
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if probs.size == 0:
        raise ContractError("evaluation needs at least one prediction")
    if probs.shape != labels.shape:
        raise DimensionError(f"{probs.size} predictions for {labels.size} labels")
    return probs, labels.astype(np.int64)


def accuracy(probs, labels) -> float:
    """Percent of examples where (prob >= 0.5) matches the label"""
    probs, labels = _check_pair(probs, labels)
    predicted = (probs >= DECISION_THRESHOLD).astype(np.int64)
    return 100.0 * float(np.mean(predicted == labels))


def predict(
    model: Model,
    dataset: GraspDataset,
    image_ids: Sequence[int],
    stats: Optional[NormStats] = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Eval-mode success probabilities, normalized with stats when given"""
    rows = dataset.positions(image_ids)
    probs = np.empty(len(rows), dtype=np.float64)
    for start in range(0, len(rows), batch_size):
        batch = rows[start : start + batch_size]
        images = dataset.images[batch].astype(np.float64)
        if stats is not None:
            images = normalize(images, stats)
        out = forward(model, images[:, None, :, :], dataset.z[batch], Mode.EVAL)
        probs[start : start + len(batch)] = out.data
    return probs


def calibration(probs, labels, n_buckets: int = 10) -> CalibrationReport:
    """Equal-width buckets over [0, 1], right-open except the last"""
    if n_buckets < 2:
        raise ContractError(f"calibration needs at least 2 buckets, got {n_buckets}")
    probs, labels = _check_pair(probs, labels)
    edges = np.arange(n_buckets + 1) / n_buckets
    index = np.clip(np.searchsorted(edges, probs, side="right") - 1, 0, n_buckets - 1)
    counts = np.bincount(index, minlength=n_buckets)
    pred_sums = np.bincount(index, weights=probs, minlength=n_buckets)
    label_sums = np.bincount(index, weights=labels.astype(np.float64), minlength=n_buckets)
    return _report_from_sums(counts, pred_sums, label_sums, n_buckets)


def _report_from_sums(counts, pred_sums, label_sums, n_buckets) -> CalibrationReport:
    buckets = []
    for k in range(n_buckets):
        count = int(counts[k])
        bucket = CalibrationBucket(lower=k / n_buckets, upper=(k + 1) / n_buckets, count=count)
        if count:
            bucket.mean_pred = float(pred_sums[k] / count)
            bucket.freq = float(label_sums[k] / count)
        buckets.append(bucket)
    return report_from_buckets(buckets)


def report_from_buckets(buckets: List[CalibrationBucket]) -> CalibrationReport:
    """ECE and MCE over the nonempty buckets"""
    total = sum(bucket.count for bucket in buckets)
    ece = mce = 0.0
    for bucket in buckets:
        if not bucket.count:
            continue
        gap = abs(bucket.mean_pred - bucket.freq)
        ece += bucket.count / total * gap
        mce = max(mce, gap)
    return CalibrationReport(buckets=buckets, ece=ece, mce=mce, n_buckets=len(buckets))


def merge_calibration(first: CalibrationReport, second: CalibrationReport) -> CalibrationReport:
    """Report of the union of two disjoint evaluation sets"""
    if first.n_buckets != second.n_buckets:
        raise ContractError(
            f"cannot merge {first.n_buckets}-bucket and {second.n_buckets}-bucket reports"
        )

    def sums(report: CalibrationReport):
        counts = np.array([b.count for b in report.buckets], dtype=np.int64)
        preds = np.array([(b.mean_pred or 0.0) * b.count for b in report.buckets])
        freqs = np.array([(b.freq or 0.0) * b.count for b in report.buckets])
        return counts, preds, freqs

    a, b = sums(first), sums(second)
    return _report_from_sums(a[0] + b[0], a[1] + b[1], a[2] + b[2], first.n_buckets)

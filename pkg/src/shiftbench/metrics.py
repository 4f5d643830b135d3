"""Scoring rules, calibration error and confidence diagnostics.

Every function takes a :class:`~shiftbench.predio.PredictionSet`. Metrics
that need ground truth raise :class:`MissingLabelsError` on label-free sets;
the histogram diagnostics accept them. Argmax ties always resolve to the
lowest class index (``numpy.argmax`` semantics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.stats import rankdata

from .predio import BinningScheme, PredictionSet, bucketize

PROB_FLOOR = 1e-12
DEFAULT_BINS = BinningScheme.equal_width(10)


class MissingLabelsError(ValueError):
    pass


@dataclass(frozen=True)
class BrierDecomposition:
    uncertainty: float
    resolution: float
    reliability: float
    total: float


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    count: int
    accuracy: Optional[float]


@dataclass(frozen=True)
class Histogram:
    counts: np.ndarray
    edges: np.ndarray

    @property
    def n_bins(self):
        return len(self.counts)


def _labels(pset):
    if pset.labels is None:
        raise MissingLabelsError(f"{pset.method}/{pset.dataset}: metric requires labels")
    return pset.labels


def predicted_class(pset):
    return np.argmax(pset.probs, axis=1)


def confidence(pset):
    return pset.probs.max(axis=1)


def entropy(pset):
    """Per-example Shannon entropy in nats, with 0 * ln 0 taken as 0."""
    p = pset.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return np.clip(terms.sum(axis=1), 0.0, math.log(pset.k))


def nll(pset: PredictionSet, return_floored=False):
    """Mean negative log-likelihood of the true labels.

    Probabilities are floored at ``PROB_FLOOR`` before the log; with
    ``return_floored`` the number of floored entries is returned as well.
    """
    y = _labels(pset)
    p_true = pset.probs[np.arange(pset.n), y]
    floored = int(np.count_nonzero(p_true < PROB_FLOOR))
    value = float(-np.mean(np.log(np.maximum(p_true, PROB_FLOOR))))
    if return_floored:
        return value, floored
    return value


def brier_per_example(pset):
    y = _labels(pset)
    p = pset.probs
    p_true = p[np.arange(pset.n), y]
    return (1.0 - 2.0 * p_true + np.sum(p * p, axis=1)) / pset.k


def brier(pset: PredictionSet) -> float:
    """Brier score, normalised by the number of classes."""
    return float(np.mean(brier_per_example(pset)))


def accuracy(pset: PredictionSet) -> float:
    y = _labels(pset)
    return float(np.mean(predicted_class(pset) == y))


def brier_decomposition(pset: PredictionSet, bins: BinningScheme = DEFAULT_BINS) -> BrierDecomposition:
    """Split the Brier score into uncertainty, resolution and reliability.

    Examples are grouped by (predicted class, confidence bucket). The
    identity ``total = uncertainty - resolution + reliability`` is exact
    when forecasts are constant within each group.
    """
    y = _labels(pset)
    n, k = pset.probs.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    conf = confidence(pset)
    bucket = bins.assign(conf)
    group_key = predicted_class(pset) * (bins.n_bins + 1) + bucket
    _, group = np.unique(group_key, return_inverse=True)
    n_groups = group.max() + 1
    sizes = np.bincount(group, minlength=n_groups).astype(np.float64)

    label_freq = onehot.mean(axis=0)
    group_freq = np.zeros((n_groups, k))
    group_fcst = np.zeros((n_groups, k))
    np.add.at(group_freq, group, onehot)
    np.add.at(group_fcst, group, pset.probs)
    group_freq /= sizes[:, None]
    group_fcst /= sizes[:, None]
    w = sizes / n

    uncertainty = (1.0 - np.sum(label_freq ** 2)) / k
    resolution = float(np.sum(w * np.sum((group_freq - label_freq) ** 2, axis=1)) / k)
    reliability = float(np.sum(w * np.sum((group_fcst - group_freq) ** 2, axis=1)) / k)
    return BrierDecomposition(float(uncertainty), resolution, reliability, brier(pset))


def ece(pset: PredictionSet, bins: BinningScheme = DEFAULT_BINS) -> float:
    y = _labels(pset)
    conf = confidence(pset)
    correct = (predicted_class(pset) == y).astype(np.float64)
    edges = bins.edges_for(conf)
    bucket = bucketize(conf, edges)
    n_b = len(edges) - 1
    acc_sum = np.bincount(bucket, weights=correct, minlength=n_b)
    conf_sum = np.bincount(bucket, weights=conf, minlength=n_b)
    # |B| * |acc - conf| = |sum(correct) - sum(conf)|; empty buckets give 0
    return float(np.sum(np.abs(acc_sum - conf_sum)) / pset.n)


def auc(scores, labels) -> float:
    """Area under the ROC curve with midrank tie handling (Mann-Whitney)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same shape")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    if not np.all((labels == 0) | pos):
        raise ValueError("labels must be binary 0/1")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def binary_auc(pset: PredictionSet, positive=1) -> float:
    y = _labels(pset)
    return auc(pset.probs[:, positive], (y == positive).astype(int))


def _histogram(values, lo, hi, n_bins):
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = bucketize(values, edges)
    return Histogram(np.bincount(idx, minlength=n_bins), edges)


def entropy_histogram(pset: PredictionSet, n_bins=10) -> Histogram:
    return _histogram(entropy(pset), 0.0, math.log(pset.k), n_bins)


def confidence_histogram(pset: PredictionSet, n_bins=10) -> Histogram:
    return _histogram(confidence(pset), 1.0 / pset.k, 1.0, n_bins)


def confidence_accuracy_curve(pset: PredictionSet, thresholds) -> List[CurvePoint]:
    """Count and accuracy of the examples with confidence >= each threshold."""
    y = _labels(pset)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be sorted ascending")
    if np.any((thresholds < 0) | (thresholds > 1)):
        raise ValueError("thresholds must lie in [0, 1]")
    conf = confidence(pset)
    correct = predicted_class(pset) == y
    points = []
    for tau in thresholds:
        keep = conf >= tau
        count = int(keep.sum())
        acc = float(correct[keep].mean()) if count else None
        points.append(CurvePoint(float(tau), count, acc))
    return points


def mean_entropy(pset):
    return float(entropy(pset).mean())


def mean_confidence(pset):
    return float(confidence(pset).mean())


LABELED_METRICS = {
    "accuracy": accuracy,
    "nll": nll,
    "brier": brier,
    "ece": ece,
    "auc": binary_auc,
    "brier_uncertainty": lambda s: brier_decomposition(s).uncertainty,
    "brier_resolution": lambda s: brier_decomposition(s).resolution,
    "brier_reliability": lambda s: brier_decomposition(s).reliability,
}
LABEL_FREE_METRICS = {
    "mean_entropy": mean_entropy,
    "mean_confidence": mean_confidence,
}


def evaluate(pset, name, bins: BinningScheme = DEFAULT_BINS):
    """Evaluate a metric by name; binned metrics use ``bins``."""
    if name == "ece":
        return ece(pset, bins)
    if name.startswith("brier_") and name != "brier":
        parts = brier_decomposition(pset, bins)
        return getattr(parts, name[len("brier_"):])
    if name in LABELED_METRICS:
        return LABELED_METRICS[name](pset)
    if name in LABEL_FREE_METRICS:
        return LABEL_FREE_METRICS[name](pset)
    raise KeyError(f"unknown metric {name!r}")

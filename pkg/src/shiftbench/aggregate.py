"""Averaging of member/sample predictions and the ensemble-size study."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import metrics as M
from .predio import PredictionSet

SIZE_STUDY_METRICS = ("brier", "nll", "ece", "accuracy")
SIZE_STUDY_RESAMPLES = 20


class AggregationError(ValueError):
    pass


def _check_compatible(sets: Sequence[PredictionSet]):
    if len(sets) == 0:
        raise AggregationError("cannot aggregate an empty list")
    first = sets[0]
    for i, s in enumerate(sets[1:], start=1):
        if s.probs.shape != first.probs.shape:
            raise AggregationError(f"member {i} has shape {s.probs.shape}, expected {first.probs.shape}")
        if (s.dataset, s.shift_type, float(s.shift_intensity)) != (
            first.dataset, first.shift_type, float(first.shift_intensity)
        ):
            raise AggregationError(f"member {i} has mismatched dataset/shift tags")
        if (s.labels is None) != (first.labels is None) or (
            s.labels is not None and not np.array_equal(s.labels, first.labels)
        ):
            raise AggregationError(f"member {i} has different labels")


def _mean(sets, method):
    _check_compatible(sets)
    first = sets[0]
    probs = np.mean(np.stack([s.probs for s in sets]), axis=0)
    return PredictionSet(
        probs=probs,
        labels=first.labels,
        logits=None,
        method=method,
        dataset=first.dataset,
        shift_type=first.shift_type,
        shift_intensity=first.shift_intensity,
        seed=first.seed,
        n_averaged=sum(s.n_averaged for s in sets),
    )


def ensemble_mean(members: Sequence[PredictionSet], method=None) -> PredictionSet:
    """Equal-weight average of independently trained members' probabilities.

    Logits are dropped: an average of probabilities has no canonical logits.
    """
    members = list(members)
    if method is None and members:
        method = f"ensemble{len(members)}:{members[0].method}"
    return _mean(members, method)


def mc_average(samples: Sequence[PredictionSet], method=None) -> PredictionSet:
    """Average Monte-Carlo samples (dropout masks or posterior draws)."""
    samples = list(samples)
    if method is None and samples:
        method = f"mc{len(samples)}:{samples[0].method}"
    return _mean(samples, method)


@dataclass(frozen=True)
class SizeStudyRow:
    size: int
    metric: str
    mean: float
    std: float


def size_study(members: Sequence[PredictionSet], sizes, metric="brier", seed=0,
               resamples=SIZE_STUDY_RESAMPLES) -> List[SizeStudyRow]:
    """Metric of ensembles of each size, over random member subsets.

    For every size ``m``, ``resamples`` subsets of ``m`` distinct members are
    drawn with a generator seeded by ``seed``; each subset is averaged with
    :func:`ensemble_mean` and scored. Returns mean and (population) std.
    """
    members = list(members)
    if metric not in SIZE_STUDY_METRICS:
        raise ValueError(f"metric must be one of {SIZE_STUDY_METRICS}")
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly ascending")
    if not sizes or sizes[0] < 1:
        raise ValueError("sizes must be positive")
    if sizes[-1] > len(members):
        raise ValueError(f"size {sizes[-1]} exceeds the {len(members)} available members")
    _check_compatible(members)
    rng = np.random.default_rng(seed)
    score = getattr(M, metric)
    rows = []
    for m in sizes:
        values = []
        for _ in range(resamples):
            pick = np.sort(rng.choice(len(members), size=m, replace=False))
            values.append(score(ensemble_mean([members[i] for i in pick])))
        # centring on the first value keeps repeated values exact (mean v, std 0)
        dev = np.asarray(values) - values[0]
        rows.append(SizeStudyRow(m, metric, float(values[0] + dev.mean()), float(dev.std())))
    return rows


def write_size_study(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["size", "metric", "mean", "std"])
        for r in rows:
            w.writerow([r.size, r.metric, repr(r.mean), repr(r.std)])

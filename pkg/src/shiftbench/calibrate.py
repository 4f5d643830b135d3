"""Post-hoc temperature scaling fitted on held-out logits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .predio import PredictionSet, softmax

T_MIN = 0.01
T_MAX = 100.0
LOG_T_TOL = 1e-6
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class Temperature:
    t: float
    at_search_bound: bool = False
    validation_nll: float = float("nan")

    def to_json(self):
        return {"temperature": self.t, "at_bound": self.at_search_bound}


def scaled_nll(logits, labels, t):
    """Mean ``-log softmax(logits / t)[y]``."""
    z = np.asarray(logits, dtype=np.float64) / t
    return float(np.mean(logsumexp(z, axis=1) - z[np.arange(z.shape[0]), labels]))


def _check_inputs(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise CalibrationError("need a non-empty N x K logit matrix")
    if labels.shape != (logits.shape[0],):
        raise CalibrationError("labels must match the number of logit rows")
    if not np.all(np.isfinite(logits)):
        raise CalibrationError("logits must be finite")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise CalibrationError("labels out of range")
    return logits, labels


def fit_temperature(logits, labels, t_min=T_MIN, t_max=T_MAX, tol=LOG_T_TOL) -> Temperature:
    """Temperature minimising validation NLL, by golden-section search on ln t.

    The NLL is convex in ``1/t`` and therefore unimodal in ``ln t``. Rows
    whose logits are all equal give a flat objective; if every row is flat
    the log-scale midpoint of the interval is returned.
    """
    logits, labels = _check_inputs(logits, labels)
    lo, hi = math.log(t_min), math.log(t_max)

    if np.all(np.ptp(logits, axis=1) == 0):
        t = math.exp((lo + hi) / 2.0)
        return Temperature(t, False, scaled_nll(logits, labels, t))

    def f(log_t):
        return scaled_nll(logits, labels, math.exp(log_t))

    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    log_t = (a + b) / 2.0
    best = f(log_t)
    # t = 1 is feasible; never return something worse than leaving logits alone
    if lo <= 0.0 <= hi and f(0.0) < best:
        log_t, best = 0.0, f(0.0)
    at_bound = (log_t - lo) <= tol or (hi - log_t) <= tol
    return Temperature(math.exp(log_t), at_bound, best)


def apply_temperature(pset: PredictionSet, temp: Temperature, suffix="+temp") -> PredictionSet:
    if pset.logits is None:
        raise CalibrationError("temperature scaling needs logits; this set has none")
    t = temp.t if isinstance(temp, Temperature) else float(temp)
    if not t > 0:
        raise CalibrationError("temperature must be positive")
    scaled = pset.logits / t
    probs = pset.probs if t == 1.0 else softmax(scaled)
    return pset.replace(probs=probs, logits=scaled, method=pset.method + suffix)

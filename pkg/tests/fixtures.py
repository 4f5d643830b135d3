"""Shared deterministic fixtures."""

import numpy as np

from shiftbench.predio import PredictionSet


def temperature_fixture(seed=7, n=2000, k=3, scale=5.0):
    """Labels drawn from softmax(z); the model reports logits ``scale * z``."""
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, k))
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(n)
    labels = np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), k - 1)
    return scale * z, labels


def random_simplex(rng, n, k, concentration=1.0):
    return rng.dirichlet(np.full(k, concentration), size=n)


def discrete_forecasts(rng, k, rows):
    """Forecast rows that each occupy their own (argmax, 10-bucket) group.

    Confidence sits above 1/2 so the argmax is the chosen class; no two rows
    share a (class, bucket) pair, so forecasts are constant within groups.
    """
    pairs = [(c, b) for c in range(k) for b in range(5, 10)]
    pick = rng.choice(len(pairs), size=min(rows, len(pairs)), replace=False)
    out = []
    for i in pick:
        c, b = pairs[i]
        conf = rng.uniform(max(0.1 * b, 0.5) + 1e-6, 0.1 * (b + 1))
        rest = rng.dirichlet(np.ones(k - 1)) * (1.0 - conf)
        out.append(np.insert(rest, c, conf))
    return np.array(out)


def random_pset(rng, n=None, k=None, discrete=False):
    n = n or int(rng.integers(1, 1001))
    k = k or int(rng.integers(2, 11))
    if discrete:
        table = discrete_forecasts(rng, k, int(rng.integers(1, 6)))
        probs = table[rng.integers(0, table.shape[0], size=n)]
    else:
        probs = random_simplex(rng, n, k, concentration=float(rng.choice([0.2, 1.0, 5.0])))
    labels = rng.integers(0, k, size=n)
    return PredictionSet(probs=probs, labels=labels)

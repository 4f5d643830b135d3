"""Seed derivation helpers shared by every stochastic component."""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_to_int(key):
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    if isinstance(key, float):
        return int(np.float64(key).view(np.uint64))
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(seed, *keys):
    """Mix a u64 seed with any number of int/float/str keys into a new u64 seed.

    Pure function of its arguments; used for per-member, per-level and
    per-stage seeds so that results never depend on execution order.
    """
    entropy = [int(seed) & _MASK64] + [_key_to_int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def rng_for(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys))


def splitmix64(x):
    """Vectorised splitmix64 finaliser over a uint64 array."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z

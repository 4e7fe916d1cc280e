"""Counter-based random streams.

A stream is a 64-bit key derived by hashing (root seed, tags...) with
``numpy.random.SeedSequence``.  Draw number c of a stream is
``splitmix64(key + c * golden)``, so every chain owns an independent,
position-addressable sequence and results never depend on scheduling.
"""
from __future__ import annotations

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

# Purpose tags keep streams for different jobs disjoint.
TAG_SIMULATE = 1
TAG_MCMLE = 2
TAG_STUDY_THETA = 3
TAG_INIT = 4
TAG_STUDY_REP = 5


def stream_key(root_seed: int, *tags: int) -> np.uint64:
    """Derive the 64-bit key of the stream identified by ``tags``."""
    if root_seed < 0:
        raise ValueError("seeds must be non-negative")
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(int(t) for t in tags))
    return ss.generate_state(1, dtype=np.uint64)[0]


def numpy_generator(root_seed: int, *tags: int) -> np.random.Generator:
    """A numpy Generator on the same derivation, for Python-side draws."""
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(int(t) for t in tags))
    return np.random.Generator(np.random.Philox(ss))


@njit(inline="always")
def mix64(key, counter):
    z = key + counter * GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def to_unit(z):
    """Uniform double in [0, 1) from the top 53 bits."""
    return np.float64(z >> np.uint64(11)) * _INV53


@njit(cache=True)
def uniforms(key, start, n):
    """n uniforms from stream ``key`` starting at counter ``start``."""
    out = np.empty(n)
    for c in range(n):
        out[c] = to_unit(mix64(key, np.uint64(start + c + 1)))
    return out

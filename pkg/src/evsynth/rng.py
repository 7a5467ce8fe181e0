"""Stateless counter-based randomness.

Every stochastic stage of the simulator draws from hashes of
(seed, coordinate, draw index) tuples instead of a shared sequential
generator. A draw is therefore a pure function of its address, so results
never depend on evaluation order, chunking, or worker count.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

# Stream tags: first field after the seed, one per purpose.
TAG_THRESHOLD_SEED = 1
TAG_NOISE_COUNT = 2
TAG_NOISE_TIME = 3
TAG_NOISE_POLARITY = 4
TAG_BROWNIAN = 5
TAG_SCENE = 6

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / float(1 << 53)


def _finalize(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer: full avalanche, bijective on uint64
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_fields(seed, *fields) -> np.ndarray:
    """Absorb integer fields into a decorrelated uint64 hash (broadcasting)."""
    with np.errstate(over="ignore"):
        h = _finalize(np.asarray(seed, dtype=np.uint64) + _GAMMA)
        for f in fields:
            h = _finalize((np.asarray(f, dtype=np.uint64) + _GAMMA) ^ h)
    return h


def spawn_seed(seed, *fields) -> int:
    """Derive an independent scalar sub-seed from (seed, fields)."""
    return int(hash_fields(seed, *fields))


def uniforms(seed, *fields) -> np.ndarray:
    """U(0, 1) draws addressed by (seed, fields); endpoints excluded."""
    h = hash_fields(seed, *fields)
    # (h >> 11) + 0.5 in units of 2^-53 keeps the result strictly inside (0, 1)
    return ((h >> _S11).astype(np.float64) + 0.5) * _INV53


def normals(seed, *fields) -> np.ndarray:
    """N(0, 1) draws via the inverse CDF of an addressed uniform."""
    return ndtri(uniforms(seed, *fields))

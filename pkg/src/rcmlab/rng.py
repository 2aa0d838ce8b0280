"""Keyed random streams.

Every stochastic quantity draws from a Philox generator whose key is derived
from ``(seed, purpose, *key)``. A stream therefore depends only on what it is
used for, never on the order in which streams are consumed, which keeps
results identical across thread counts.
"""

import numpy as np

_PURPOSE = {
    "edges": 1,
    "xi": 2,
    "walk": 3,
    "walk-batch": 4,
    "trials": 5,
}

_SHIFT = 1 << 30


def _encode(key):
    out = []
    for k in key:
        k = int(k)
        if not -_SHIFT <= k < _SHIFT:
            raise ValueError(f"stream key component out of range: {k}")
        out.append(k + _SHIFT)
    return out


def stream(seed, purpose, *key):
    """Return an independent generator for ``(seed, purpose, *key)``."""
    if int(seed) < 0:
        raise ValueError("seed must be nonnegative")
    entropy = [int(seed), _PURPOSE[purpose], len(key), *_encode(key)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

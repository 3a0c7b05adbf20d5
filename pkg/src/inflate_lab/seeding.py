"""Deterministic RNG derivation.

Every randomized operation takes an integer seed and derives child
generators through :func:`rng_for`, so identical inputs always replay
bit-identically, including across thread counts (children are keyed by
index, never by scheduling order).
"""

from __future__ import annotations

import numpy as np


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Return a generator keyed by ``seed`` and a static derivation path."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *[int(p) & 0xFFFFFFFF for p in path]])

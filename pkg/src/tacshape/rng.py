"""Deterministic random-stream derivation.

Every stochastic routine takes an integer seed and derives its generator
through `rng_from`, so independent sub-streams (per shape, per touch, per
sample index) never alias and reruns are bit-reproducible.
"""

from __future__ import annotations

import numpy as np


def rng_from(*keys: int) -> np.random.Generator:
    """Generator for the stream identified by an integer key path.

    Keys are combined through `SeedSequence`, which gives independent
    streams for different key tuples (counter-based derivation: stream
    (seed, i) never depends on stream (seed, j)).
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]))


def subseed(*keys: int) -> int:
    """Stable 32-bit sub-seed derived from a key path."""
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]).generate_state(1)[0])

"""Deterministic RNG derivation.

Every stochastic operation in the package consumes a generator derived
from a master seed plus an integer path (stream id, step index, task
index, ...).  Philox is counter-based, so derived streams are stable
across platforms and independent of evaluation order, which is what the
replay and parallel-sweep contracts rely on.
"""

from __future__ import annotations

import numpy as np

# stream ids, so unrelated consumers of one master seed never collide
STREAM_DATA = 1
STREAM_TRAIN = 2
STREAM_SAMPLER = 3
STREAM_MEASURE = 4
STREAM_INIT = 5


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for (seed, path); same arguments always give the same stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def float_key(x: float) -> int:
    """Stable integer key for a float (bit pattern), used to seed per-value tasks."""
    return int(np.float64(x).view(np.uint64))

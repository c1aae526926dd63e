"""Seeded, platform-stable random streams.

Every stochastic operation takes a ``numpy.random.Generator``. Batch
pipelines derive one generator per sample from a user seed and the
sample index, so results do not depend on batch partitioning or worker
count.
"""

from __future__ import annotations

import numpy as np


def derive_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return the generator for substream ``stream`` of ``seed``.

    The same (seed, stream) pair yields the same draw sequence on every
    platform and in every process.
    """
    seed = int(seed)
    stream = int(stream)
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative integers")
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))

"""Seeded, counter-based random generators.

Every stochastic operation derives its generator from a tuple of integer keys
(e.g. ``(seed, epoch, sample_index)``) so results never depend on call order.
"""

from __future__ import annotations

import numpy as np


def generator(*keys: int) -> np.random.Generator:
    """Return a Philox-backed generator keyed by the given non-negative ints."""
    entropy = [int(k) for k in keys]
    if any(k < 0 for k in entropy):
        raise ValueError(f"seed keys must be non-negative, got {entropy}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

"""Counter-based RNG streams keyed by (seed, purpose, index...)."""

import numpy as np

# stream purposes; values are part of the reproducibility contract
PRIOR = 1
DESIGN = 2
NOISE = 3
CHAIN_INIT = 4
CHAIN = 5
THETA = 6
REPETITION = 7
SLAB_TABLE = 8


def seed_sequence(seed, *key):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    if isinstance(seed, (int, np.integer)) and not isinstance(seed, bool) and seed >= 0:
        return np.random.SeedSequence(int(seed), spawn_key=tuple(key))
    raise TypeError(f"seed must be a non-negative int or SeedSequence, got {seed!r}")


def rng(seed, *key):
    """A Philox generator for the stream ``key`` under ``seed``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *key)))

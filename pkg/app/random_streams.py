"""
Seeded random streams.

Replica streams are keyed by (seed, study keys..., replica index), so a replica
draws the same variates whatever thread runs it. Coupled-family clocks come
from a counter-based Philox generator keyed by the seed, with the construction
round as the counter, so every truncation in the family reads identical
variates.
"""

import numpy as np


def replica_generator(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))))


def _philox_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)


def round_generator(seed: int, round_index: int) -> np.random.Generator:
    """Independent generator for one construction round."""
    counter = np.array([0, 0, 0, int(round_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_philox_key(seed), counter=counter))

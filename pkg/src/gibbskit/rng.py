"""Reproducible random streams.

All randomness comes from numpy's counter-based Philox bit generator.  A
stream is identified by ``(seed, chain_id)``; distinct chain ids give
statistically independent substreams, so replicas can run in any order (or in
parallel) and still reproduce bit for bit.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def substream(seed: int, chain_id: int = 0) -> np.random.Generator:
    """Return the generator owned by chain ``chain_id`` under ``seed``."""
    if seed < 0 or chain_id < 0:
        raise ValueError("seed and chain_id must be non-negative")
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=(int(chain_id),))
    return np.random.Generator(np.random.Philox(ss))


def substreams(seed: int, n: int, offset: int = 0) -> list:
    return [substream(seed, offset + i) for i in range(n)]


def as_generator(rng) -> np.random.Generator:
    """Coerce ``None`` / int / Generator into a Generator (int -> chain 0)."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("an explicit seed or Generator is required")
    return substream(int(rng), 0)

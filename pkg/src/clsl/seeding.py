"""Deterministic seed derivation.

``derive_seed(base, *keys)`` feeds the base seed and the CRC32 of each key's
``repr`` into :class:`numpy.random.SeedSequence` and takes the first 63 bits of
its output. Keys are typically short strings and known-label ratios, so sweep
rows get reproducible streams independent of execution order.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(base: int, *keys) -> int:
    entropy = [int(base) & 0xFFFFFFFF] + [zlib.crc32(repr(k).encode()) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def rng_for(base: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *keys))

"""Deterministic RNG substream derivation.

All randomness in the package flows from one master seed. Independent
substreams are derived by seeding a fresh PCG64 with a tuple of integer
keys (master seed, stage tag, trial, ...), so parallel and serial
execution consume identical streams regardless of scheduling order.
"""

from __future__ import annotations

import numpy as np

# Stage tags keep substreams for different purposes disjoint even when the
# remaining key integers collide.
TAG_USER_DROP = 0x01
TAG_VISIBILITY = 0x02
TAG_SMALL_SCALE = 0x03
TAG_NOISE = 0x04
TAG_SYMBOLS = 0x05
TAG_RKA_ROWS = 0x06
TAG_GENERIC = 0x0F


def substream(*keys: int) -> np.random.Generator:
    """Return a Generator seeded deterministically from integer keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(tuple(int(k) for k in keys))))


def rka_row_stream(master_seed: int, trial: int, subarray: int, user: int) -> np.random.Generator:
    """Row-sampling stream for one rKA user solve, mixed per (trial, subarray, user)."""
    return substream(master_seed, TAG_RKA_ROWS, trial, subarray, user)

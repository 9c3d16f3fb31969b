"""Counter-based random streams for reproducible parallel Monte Carlo.

Every consumer derives its own Philox stream from ``(seed, *tags)``, so the
realized randomness is a pure function of seed, purpose tag and trial (or
batch) index — independent of scheduling, worker count and call order.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Trials are grouped in fixed-size batches for vectorized sampling; the size
# is part of the reproducibility contract and must not depend on workers.
BATCH = 4096


def stream_key(seed: int, *tags) -> np.ndarray:
    """Derive a 128-bit Philox key from the seed and an arbitrary tag tuple."""
    digest = hashlib.sha256(repr((seed,) + tags).encode()).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


def substream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for one (seed, purpose, index...) combination."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *tags)))


def batch_ranges(trials: int):
    """Yield (batch_index, lo, hi) covering ``range(trials)`` in fixed batches."""
    for b in range((trials + BATCH - 1) // BATCH):
        lo = b * BATCH
        yield b, lo, min(lo + BATCH, trials)

"""Counter-based random streams.

Every consumer derives its own generator from the master seed plus a tuple of
integer keys, so the values drawn never depend on call order across workers.
"""
from __future__ import annotations

import zlib

import numpy as np

# purpose tags keep streams for different subsystems disjoint
PURPOSES = {
    "population": 1,
    "dataset": 2,
    "split": 3,
    "train": 4,
    "malice": 5,
    "dynamics": 6,
    "ga": 7,
    "repair": 8,
    "baseline": 9,
    "init": 10,
    "model": 11,
}


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    if isinstance(k, str):
        return PURPOSES.get(k) or zlib.crc32(k.encode("utf-8"))
    raise TypeError(f"unsupported stream key {k!r}")


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *keys)``."""
    entropy = [_key(seed)] + [_key(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

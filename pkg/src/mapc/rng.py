"""Seeded random substreams.

Every consumer of randomness gets its own stream derived from the master
seed and a tuple of keys, e.g. ``substream(seed, "fading", txop, round)``.
String keys are mapped through CRC32 so the derivation is stable across
platforms and interpreter runs.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError(f"substream keys must be non-negative, got {k}")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def substream(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))

"""Deterministic, splittable random streams.

Every stream is a Philox (counter-based) generator keyed by a master seed and
a path of integer or string labels, so stream ``(seed, "bootstrap", 7)`` is
the same no matter how many other streams were drawn before it, or in which
process.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "label_key"]


def label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode())


def stream(seed: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(label_key(x) for x in path))
    return np.random.Generator(np.random.Philox(ss))

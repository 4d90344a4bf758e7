"""Seeded random streams.

Every stochastic site (initialization, shuffling, augmentation, cutout) draws
from its own stream, derived from the experiment seed plus a path of labels.
Streams are Philox generators keyed through ``SeedSequence.spawn_key``, so two
sites never share state and the result does not depend on call order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    raise ValueError(f"stream key parts must be non-negative ints or strings, got {part!r}")


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Return an independent generator for ``(seed, *path)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))

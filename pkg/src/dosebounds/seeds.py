"""Deterministic named random substreams.

A single process-global seed fans out into independent generators, one per
named component (projections, outcome noise, batch shuffling, ...).  Streams
are keyed by stable CRC32 hashes of the component names, so results do not
depend on import order or on how many other streams were created first.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names: object) -> np.random.Generator:
    """Child generator of ``seed`` addressed by a path of component names."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    key = tuple(zlib.crc32(str(name).encode("utf-8")) for name in names)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def derive_seed(seed: int, *names: object) -> int:
    """Stable integer seed derived from ``seed`` and a path of names."""
    stream = substream(seed, *names)
    return int(stream.integers(0, 2**63 - 1))

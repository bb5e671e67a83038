"""Reproducible per-replica random streams.

A stream is addressed by the master seed plus a path such as
``("converge", "n=100", "brw", 17)``.  Integers in the path are used as-is;
any other entry is hashed to a 32-bit word with BLAKE2b of its ``str()``.  The path becomes the
``spawn_key`` of a :class:`numpy.random.SeedSequence`, so two different paths
never share a stream and the mapping can be reproduced from this docstring
alone.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, (int, np.integer)) and not isinstance(part, bool):
        if part < 0:
            raise ValueError("stream path integers must be nonnegative")
        return int(part)
    digest = hashlib.blake2b(str(part).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def spawn_key(*path) -> tuple[int, ...]:
    return tuple(_word(p) for p in path)


def stream(master_seed: int, *path) -> np.random.Generator:
    """Independent ``Generator(PCG64)`` for ``(master_seed, *path)``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=spawn_key(*path))
    return np.random.Generator(np.random.PCG64(ss))

"""Named sub-seeds derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def sub_seed(root: int, *names) -> int:
    """Deterministic 63-bit seed for the stream named ``names`` under ``root``."""
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(_key(n) for n in names))
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1 << 31, 1], dtype=np.uint64))


def rng(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(sub_seed(root, *names))

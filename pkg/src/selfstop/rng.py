"""Per-purpose random streams derived from one integer seed.

Each stream is keyed by a purpose tag (``"noise"``, ``"mask"``, ...), so
adding or renaming one consumer never shifts the draws seen by another.
"""
import zlib

import numpy as np


def stream(seed: int, purpose: str) -> np.random.Generator:
    key = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))

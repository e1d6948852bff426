"""Stable seed derivation from labelled tuples."""
from __future__ import annotations

import zlib

import numpy as np


def derive_seed(*parts) -> int:
    """63-bit seed from any mix of ints and strings; independent of PYTHONHASHSEED."""
    words = []
    for p in parts:
        if isinstance(p, (int, np.integer)):
            words.append(int(p) & 0xFFFFFFFF)
            words.append((int(p) >> 32) & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(str(p).encode()))
    return int(np.random.SeedSequence(words).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)

"""Stable named RNG substreams derived from a single master seed."""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part) & 0xFFFFFFFF


def derive_seed(seed, *names):
    """Deterministic 63-bit seed for the substream ``(seed, *names)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1),
                                spawn_key=tuple(_key(n) for n in names))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


def substream(seed, *names):
    return np.random.default_rng(derive_seed(seed, *names))

"""Deterministic seed derivation.

Every stochastic component takes an explicit integer seed. When one run
needs several independent streams (model init, per-stage shuffles, subsample
draws) the sub-seeds are derived by hashing the parent seed together with a
string tag, so the assignment is stable across processes and platforms
(never based on Python's randomized `hash`).
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map a tuple of ints/strings to a stable 63-bit seed."""
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little") & (2**63 - 1)


def make_rng(seed: int, *tags) -> np.random.Generator:
    """PCG64 generator for `seed`, optionally forked by stream tags."""
    if tags:
        seed = derive_seed(seed, *tags)
    return np.random.Generator(np.random.PCG64(seed))

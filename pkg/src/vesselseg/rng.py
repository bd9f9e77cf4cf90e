"""Deterministic named RNG substreams.

All randomness flows from one root seed split per stage by name, so adding
stages never perturbs earlier ones and every run is reproducible from its
seed alone.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_rng(root_seed, *path):
    """Generator for the substream named by path, e.g.
    derive_rng(7, "train", "fold2", "sampling")."""
    words = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    for part in path:
        digest = hashlib.blake2b(str(part).encode(), digest_size=16).digest()
        words.append(int.from_bytes(digest[:8], "little"))
        words.append(int.from_bytes(digest[8:], "little"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))

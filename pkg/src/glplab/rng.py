"""Seeded, labeled random streams.

Every stream is a counter-based Philox generator keyed by ``(seed, *labels)``.
Labels are hashed with a stable digest, so adding a new labeled stream never
shifts the draws of an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(label) -> int:
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for ``seed`` and a path of labels."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    entropy = [int(seed)] + [_label_key(label) for label in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_rng(rng_or_seed) -> np.random.Generator:
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return stream(int(rng_or_seed))

"""Deterministic random streams built on the counter-based Philox generator.

Every stochastic routine in the toolkit derives its own stream from a user
seed plus a tuple of tags (operation name, configuration values, task index),
so results are bitwise reproducible and independent of scheduling.
"""

import hashlib

import numpy as np


def stream_key(seed, *tags) -> int:
    """Derive a 128-bit Philox key from a seed and arbitrary hashable tags."""
    text = repr((int(seed),) + tags).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=16).digest(), "little")


def stream(seed, *tags) -> np.random.Generator:
    """A Generator on an independent Philox stream for (seed, *tags)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *tags)))

"""Named, reproducible random sub-streams.

Every source of randomness in a run flows from a single master seed through
stable hashing, so individual components (task shuffling, scripted policies,
per-attempt sampling) can be re-derived independently of execution order.
"""

from __future__ import annotations

import hashlib
import random


def stable_hash64(text: str) -> int:
    """Platform-independent 64-bit hash of a string."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_seed(master_seed: int, stream: str) -> int:
    """Derive the seed of a named sub-stream from the master seed."""
    return stable_hash64(f"{master_seed}:{stream}")


def stream_rng(master_seed: int, stream: str) -> random.Random:
    """A fresh PRNG for a named sub-stream."""
    return random.Random(derive_seed(master_seed, stream))

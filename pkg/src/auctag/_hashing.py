"""Deterministic 64-bit hashing used for feature indices and seed derivation.

Python's builtin ``hash`` is salted per process, so every hash that feeds a
feature index or a PRNG seed goes through keyed blake2b instead.  The scheme
is pinned under the name recorded in run metadata and checkpoints.
"""

from __future__ import annotations

import hashlib

HASH_NAME = "blake2b-64"

_MASK64 = (1 << 64) - 1


def hash64(text: str, seed: int = 0) -> int:
    """Seeded 64-bit hash of a unicode string, stable across runs and platforms."""
    key = (seed & _MASK64).to_bytes(8, "little")
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def derive_seed(*parts: object) -> int:
    """Collapse a tuple of scope labels/indices into one 64-bit PRNG seed.

    Used everywhere a sub-stream is split off a master seed, so that trial
    seeds are a pure function of their coordinates and no global RNG exists.
    """
    return hash64("\x1f".join(str(p) for p in parts))

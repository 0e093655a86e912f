"""Deterministic seed derivation and content hashing.

Every random stage in the lab draws from a seed derived here, so adding a
new stage (or a new method to an experiment) never shifts the random
streams of the stages that already exist.
"""

from __future__ import annotations

import hashlib

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string. Dependency-free and stable."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(*parts: object) -> int:
    """Collapse (seed, stage_name, entity_index, ...) into a 63-bit seed.

    SHA-256 based so the mapping is identical across platforms and runs;
    repr() keeps ints and strings from colliding with each other.
    """
    key = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little") >> 1

"""Stable seed derivation so adding a stage or method never shifts another's randomness."""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Derive a 63-bit seed from any mix of ints/floats/strings.

    Platform-independent (unlike hash()) and stable across runs, so every
    random stage can own a named seed derived from a master seed.
    """
    key = "\x1f".join(repr(p) for p in parts).encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF

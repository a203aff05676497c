"""Deterministic seed derivation for nested experiment grids.

Python's builtin hash() is salted per process, so derived seeds go through
sha256 of a canonical string instead. Every RNG in the package is a PCG64
Generator built from such a seed; nothing reads global numpy state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Map a tuple of coordinates (ints/strings) to a stable 32-bit seed."""
    tag = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def make_rng(*parts: object) -> np.random.Generator:
    """Generator seeded from derive_seed(*parts)."""
    return np.random.default_rng(derive_seed(*parts))

"""Deterministic seed derivation.

All randomness in the package flows through named child seeds derived from a
single root seed, so results are reproducible and independent of execution
order (runs, passes, trees, and folds each get their own stream).
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *parts) -> int:
    """Derive a 64-bit child seed from a root seed and a key path.

    The path is hashed with SHA-256, so the mapping is stable across
    platforms and Python versions.
    """
    key = "/".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root: int, *parts) -> np.random.Generator:
    """A fresh numpy Generator seeded from a derived child seed."""
    return np.random.default_rng(derive_seed(root, *parts))

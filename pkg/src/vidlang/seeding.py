"""Named seed derivation.

All randomness in a run flows from one root seed. Components ask for a
stream by name ("pretrain/stage0", "corpus/clip/17", ...) so that two
ablation arms sharing a root seed see identical data order, and parallel
workers derive per-item seeds without coordination.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, name: str) -> int:
    """Derive a 63-bit child seed from a root seed and a stream name."""
    digest = hashlib.blake2s(f"{root_seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def derived_rng(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, name))

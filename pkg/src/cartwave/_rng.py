"""Deterministic per-purpose random streams.

One 64-bit seed fans out to independent counter-based (Philox) streams keyed
by a purpose tag and integer indices, so adding a new experiment never
perturbs the draws of an existing one and any replicate can be regenerated
in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_hash(purpose: str) -> int:
    return int.from_bytes(hashlib.sha256(purpose.encode()).digest()[:4], "big")


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Philox generator for (seed, purpose, index...)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_tag_hash(purpose), *index))
    return np.random.Generator(np.random.Philox(ss))

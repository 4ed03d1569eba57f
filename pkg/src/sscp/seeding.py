"""Deterministic seed derivation.

Every randomized stage of an experiment run draws from its own stream,
derived from (master seed, seed index, stage name). Streams are independent
by construction, so adding or removing one method never perturbs the
randomness any other method sees.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash64(*parts: bytes | str | int) -> int:
    """Platform-independent 64-bit hash of a sequence of parts."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            part = part.encode("utf-8")
        elif isinstance(part, int):
            part = part.to_bytes(16, "little", signed=True)
        h.update(part)
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def derive_seed(master_seed: int, seed_index: int, stage: str) -> int:
    """Seed for one (run, stage) stream."""
    return stable_hash64(master_seed, seed_index, stage)


def stage_rng(master_seed: int, seed_index: int, stage: str) -> np.random.Generator:
    """Fresh generator for one (run, stage) stream."""
    return np.random.default_rng(derive_seed(master_seed, seed_index, stage))

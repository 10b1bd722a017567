"""Seed-stream helpers.

Every stream is addressed by a path of integer keys below a root seed, so
streams with different paths never share state.
"""
from __future__ import annotations

import numpy as np

SeedLike = int | np.random.SeedSequence

# stream labels below a replicate
DATA, MCMC, EVAL = 0, 1, 2


def seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def child(seed: SeedLike, *keys: int) -> np.random.SeedSequence:
    """Deterministic sub-stream of ``seed`` labelled by ``keys``."""
    ss = seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in keys))


def generator(seed: SeedLike, *keys: int) -> np.random.Generator:
    return np.random.default_rng(child(seed, *keys) if keys else seed_sequence(seed))

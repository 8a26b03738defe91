"""Deterministic seed derivation.

Every random stream is a :class:`numpy.random.SeedSequence` addressed by a
path of integers below the run seed, e.g. ``(seed, rep, stream)``. The same
path always yields the same stream, whatever order or process computes it.
"""

from __future__ import annotations

import numpy as np

STREAMS = {"outcome": 0, "clusters": 1, "sample_a": 2, "sample_b": 3, "folds": 4, "learners": 5}


def as_seedseq(seed: int | np.random.SeedSequence) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def child(seed: int | np.random.SeedSequence, *path: int) -> np.random.SeedSequence:
    """Child sequence at ``path`` below ``seed``; does not mutate ``seed``."""
    ss = as_seedseq(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(p) for p in path))


def replication_seed(seed: int, rep: int) -> np.random.SeedSequence:
    """Seed for replication ``rep`` of a run started with ``seed``."""
    return child(seed, rep)


def stream(seed: int | np.random.SeedSequence, name: str, *path: int) -> np.random.Generator:
    return np.random.default_rng(child(seed, STREAMS[name], *path))

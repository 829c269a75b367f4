"""Seed derivation tree.

Every stochastic step draws from ``derive_seed(run_seed, *path)``, a 32-bit
integer taken from ``numpy.random.SeedSequence(run_seed, spawn_key=path)``.
Fixed paths:

    (0,)          reference sample of a fitted pipeline
    (1, k)        synthetic data item k
    (2, r)        repetition r of an experiment
    (2, r, 0|1)   first / second sample drawn inside repetition r
    (2, r, 2)     reference sample inside repetition r
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

REFERENCE = (0,)
SYNTHETIC = 1
REPETITION = 2


def derive_seed(run_seed: int, *path: int) -> int:
    if int(run_seed) < 0 or any(int(p) < 0 for p in path):
        raise DomainError("seeds and seed paths must be nonnegative")
    ss = np.random.SeedSequence(int(run_seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def derive_rng(run_seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(run_seed, *path))

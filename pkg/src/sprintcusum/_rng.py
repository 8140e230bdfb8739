"""Seed derivation helpers.

Every stochastic routine in this package derives its generators from a
master seed plus a fixed integer path, so results are bit-identical no
matter in which order (or on how many workers) sub-tasks execute.
"""

from __future__ import annotations

import numpy as np

# Stage tags keep seed paths from colliding across subsystems.
STAGE_PHASE1 = 1
STAGE_SELECT_K = 2
STAGE_PRELIM = 3
STAGE_TUNE = 4
STAGE_STREAM = 5
STAGE_REFERENCE = 6
STAGE_REPLICATION = 7
STAGE_ORACLE = 8


Seed = "int | tuple[int, ...]"


def derive(seed: "int | tuple[int, ...]", *path: int) -> np.random.Generator:
    """Generator for ``(seed, *path)``; identical path -> identical stream."""
    base = tuple(int(s) for s in seed) if isinstance(seed, tuple) else (int(seed),)
    return np.random.default_rng(np.random.SeedSequence(base + tuple(int(p) for p in path)))

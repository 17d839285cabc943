"""Deterministic RNG derivation.

One global seed drives every stage.  Per-stage and per-item generators are
derived as PCG64 streams keyed by ``SeedSequence(seed, spawn_key=path)``,
where ``path`` is a tuple of small integers: a stage constant followed by
optional item counters (epoch index, output clip index, ensemble run, ...).
Serial and parallel execution therefore draw from identical streams.
"""

import numpy as np

STAGE_SYNTH = 0
STAGE_AUGMENT = 1
STAGE_SPLIT = 2
STAGE_INIT = 3
STAGE_TRAIN = 4
STAGE_MIL = 5
STAGE_RANK = 6
STAGE_HIGHLIGHT = 7
STAGE_GRADCHECK = 8


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for stage/item `path` under the global `seed`."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))

"""Named random substreams derived from one experiment seed.

Every source of randomness (parameter init, corpus shuffling, synthetic data,
dropout) draws from its own stream, so each component is reproducible on its
own and adding a consumer never shifts the others.
"""

from __future__ import annotations

import numpy as np

STREAMS = {"init": 0, "shuffle": 1, "toygen": 2, "dropout": 3}


def stream_seed(seed: int, name: str, extra: tuple[int, ...] = ()) -> np.random.SeedSequence:
    return np.random.SeedSequence((seed, STREAMS[name], *extra))


def stream_rng(seed: int, name: str, extra: tuple[int, ...] = ()) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, name, extra))

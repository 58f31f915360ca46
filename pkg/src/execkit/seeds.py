"""Named, reproducible random streams derived from one master seed.

Every stochastic stage pulls from its own stream so that stages can be
rerun or parallelized without perturbing each other, and so that held-out
evaluation paths never overlap the training draws.
"""

from __future__ import annotations

import numpy as np

# Fixed stream ids; changing them invalidates reproducibility of old runs.
STREAM_IDS = {
    "dp": 1,
    "pretrain": 2,
    "train": 3,
    "eval": 4,
    "turbulence": 5,
    "baseline": 6,
}


def stream_seed(master_seed: int, stream: str, *indices: int) -> np.random.SeedSequence:
    """Derive the seed sequence for a named stream.

    Extra integer indices identify substreams (portfolio index, restart
    number, ...). The derivation depends only on the values passed, never
    on call order or thread scheduling.
    """
    if stream not in STREAM_IDS:
        raise KeyError(f"unknown stream {stream!r}; expected one of {sorted(STREAM_IDS)}")
    return np.random.SeedSequence((int(master_seed), STREAM_IDS[stream], *map(int, indices)))


def stream_rng(master_seed: int, stream: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master_seed, stream, *indices))

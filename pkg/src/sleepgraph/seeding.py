"""Deterministic RNG sub-streams derived from one base seed.

Every source of randomness in the package (splits, parameter init, dropout,
perturbation draws, ...) pulls its generator from here, so a single integer
seed reproduces a whole experiment bit for bit.
"""

from __future__ import annotations

import zlib

import numpy as np


def trial_seed(base_seed: int, trial_index: int) -> int:
    """Per-trial seed: base XOR trial index."""
    return base_seed ^ trial_index


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Named, indexed RNG stream under `seed`.

    The stream key is a CRC of the name (stable across processes, unlike
    `hash`), so e.g. substream(s, "dropout") and substream(s, "init") never
    collide.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(key, *indices))
    return np.random.default_rng(ss)

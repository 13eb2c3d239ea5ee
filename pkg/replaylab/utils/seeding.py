from __future__ import annotations

import zlib
from typing import NamedTuple

import numpy as np


class RunStreams(NamedTuple):
    env: np.random.Generator
    eval: np.random.Generator
    agent: np.random.Generator
    init: np.random.Generator


def run_streams(seed_root: int, seed: int) -> RunStreams:
    """Independent streams for one run: seed `seed` under root `seed_root`.

    A seed maps to the same streams whatever the variant or grid cell, so variants
    compared at a seed share environment randomness.
    """
    children = np.random.SeedSequence(entropy=seed_root, spawn_key=(seed,)).spawn(4)
    return RunStreams(*(np.random.default_rng(child) for child in children))


def stats_rng(seed_root: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed_root, zlib.crc32(tag.encode("utf-8"))]))

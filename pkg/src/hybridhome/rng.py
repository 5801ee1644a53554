"""Deterministic, named random streams.

Every stochastic component (occupant draws, outdoor noise, exploration,
replay sampling, ...) pulls from its own named generator so that adding or
removing one consumer never perturbs the draws seen by another. Stream
seeds are derived from the run seed plus a stable hash of the stream name,
so sequences are reproducible across processes and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(root_seed: int, name: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4)]
    return np.random.SeedSequence([root_seed & 0xFFFFFFFFFFFFFFFF, *words])


def make_stream(root_seed: int, name: str) -> np.random.Generator:
    """Create the generator for ``name`` under ``root_seed``."""
    return np.random.default_rng(stream_seed(root_seed, name))


class RngStreams:
    """Lazily created cache of named generators under one root seed."""

    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = make_stream(self.root_seed, name)
        return self._streams[name]

"""Named, reproducible random streams on the counter-based Philox generator.

Each stream is keyed by (seed, name) so adding a stream never shifts the
draws of another one.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(ss))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child streams, advancing ``rng`` once."""
    keys = rng.integers(0, 2**63 - 1, size=n)
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(int(k)))) for k in keys]


def get_state(rng: np.random.Generator) -> dict:
    return _jsonable(rng.bit_generator.state)


def set_state(rng: np.random.Generator, state: dict) -> None:
    st = dict(state)
    st["state"] = {k: np.array(v, dtype=np.uint64) for k, v in state["state"].items()}
    st["buffer"] = np.array(state["buffer"], dtype=np.uint64)
    rng.bit_generator.state = st


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [int(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


class Streams:
    """The fixed set of streams a training run draws from."""

    NAMES = ("init", "batch", "wiener", "probe", "query", "eval")

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._g = {name: stream(seed, name) for name in self.NAMES}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._g[name]

    def state(self) -> dict:
        return {"seed": self.seed, "streams": {k: get_state(g) for k, g in self._g.items()}}

    def load(self, state: dict) -> None:
        for k, st in state["streams"].items():
            set_state(self._g[k], st)

"""Deterministic random streams with labeled sub-streams.

Thin wrapper over numpy's PCG64: one seed plus an identical call sequence
always reproduces the same outputs, and ``spawn`` derives independent child
streams from integer keys so parallel consumers (games, episodes) stay
decoupled from each other's draw counts.
"""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np


class Rng:
    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = _spawn_key
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_spawn_key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, *key: int) -> "Rng":
        """Independent child stream; same (seed, key) always gives the same stream."""
        return Rng(self.seed, self.spawn_key + tuple(int(k) for k in key))

    def integers(self, low: int, high: int) -> int:
        return int(self.gen.integers(low, high))

    def random(self) -> float:
        return float(self.gen.random())

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self.gen.uniform(low, high, size)

    def normal(self, loc: float, scale: float, size) -> np.ndarray:
        return self.gen.normal(loc, scale, size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.gen.choice(n, size=size, replace=replace)

    def choice_weighted(self, n: int, p: np.ndarray) -> int:
        return int(self.gen.choice(n, p=p))

    def shuffle(self, items: list) -> None:
        self.gen.shuffle(items)

    def pick(self, items: Sequence):
        return items[self.integers(0, len(items))]

    def state(self) -> dict[str, Any]:
        """JSON-serializable snapshot of the stream position."""
        return {
            "seed": self.seed,
            "spawn_key": list(self.spawn_key),
            "bit_generator": self.gen.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state: dict[str, Any]) -> "Rng":
        rng = cls(state["seed"], tuple(state["spawn_key"]))
        bg_state = state["bit_generator"]
        # JSON round-trips tuples as lists inside the PCG64 state dict.
        fixed = {
            "bit_generator": bg_state["bit_generator"],
            "state": {k: int(v) for k, v in bg_state["state"].items()},
            "has_uint32": int(bg_state["has_uint32"]),
            "uinteger": int(bg_state["uinteger"]),
        }
        rng.gen.bit_generator.state = fixed
        return rng

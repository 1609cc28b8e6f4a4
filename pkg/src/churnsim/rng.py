"""Seeded random streams.

Every randomized routine takes a :class:`RandomStream`. Streams wrap a
Philox counter-based generator and hand out values from pre-drawn blocks,
which keeps per-draw overhead low in the simulation loops while staying
fully reproducible for a given seed.
"""
from __future__ import annotations

import numpy as np

BLOCK = 8192


class RandomStream:
    """Buffered uniform/exponential draws from ``Philox(seed)``."""

    def __init__(self, seed: int, stream: int = 0, block: int = BLOCK):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        spawn_key = (self.stream,) if self.stream else ()
        ss = np.random.SeedSequence(self.seed, spawn_key=spawn_key)
        self.generator = np.random.Generator(np.random.Philox(ss))
        self._block = block
        self._u: list[float] = []
        self._ui = 0
        self._e: list[float] = []
        self._ei = 0

    def child(self, stream: int) -> RandomStream:
        """Independent stream derived from the same seed."""
        return RandomStream(self.seed, stream=stream, block=self._block)

    def random(self) -> float:
        i = self._ui
        if i >= len(self._u):
            self._u = self.generator.random(self._block).tolist()
            i = 0
        self._ui = i + 1
        return self._u[i]

    def take(self, k: int) -> list[float]:
        """``k`` uniforms in [0, 1) as a list."""
        i = self._ui
        if i + k > len(self._u):
            rest = self._u[i:]
            self._u = rest + self.generator.random(max(self._block, k)).tolist()
            i = 0
        self._ui = i + k
        return self._u[i:i + k]

    def below(self, m: int) -> int:
        # floor(u*m) with 53-bit u: bias is below m / 2**53
        return int(self.random() * m)

    def exponential(self, rate: float) -> float:
        i = self._ei
        if i >= len(self._e):
            self._e = self.generator.standard_exponential(self._block).tolist()
            i = 0
        self._ei = i + 1
        return self._e[i] / rate


def trial_seed(base_seed: int, trial: int) -> int:
    return int(base_seed) ^ int(trial)

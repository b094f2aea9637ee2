"""Explicit random streams.

Every sampler in the package takes a stream argument. A :class:`RandomStream`
wraps a numpy ``Generator`` and buffers uniforms, normals and exponentials so
that the scalar-heavy retrospective loops do not pay numpy call overhead on
every draw. Consumption order is deterministic, so a stream built from a given
seed always produces the same simulation.
"""

from __future__ import annotations

import math

import numpy as np

_BLOCK = 512


class RandomStream:
    def __init__(self, generator: np.random.Generator):
        self.generator = generator
        self._u = np.empty(0)
        self._ui = 0
        self._z = np.empty(0)
        self._zi = 0

    def uniform(self) -> float:
        if self._ui >= len(self._u):
            self._u = self.generator.random(_BLOCK)
            self._ui = 0
        u = self._u[self._ui]
        self._ui += 1
        return float(u)

    def normal(self) -> float:
        if self._zi >= len(self._z):
            self._z = self.generator.standard_normal(_BLOCK)
            self._zi = 0
        z = self._z[self._zi]
        self._zi += 1
        return float(z)

    def exponential(self, rate: float) -> float:
        """Exponential variate with the given rate; rate 0 gives +inf."""
        if rate <= 0.0:
            return math.inf
        # 1 - U lies in (0, 1]
        return -math.log(1.0 - self.uniform()) / rate

    def poisson(self, mean: float) -> int:
        if mean <= 0.0:
            return 0
        return int(self.generator.poisson(mean))

    def coin(self) -> bool:
        return self.uniform() < 0.5

    def spawn(self, key: int) -> "RandomStream":
        """Child stream split deterministically from this stream's generator."""
        seed = int(self.generator.integers(0, 2**63 - 1))
        return stream_for(seed, key)


def stream_for(seed: int, *index: int) -> RandomStream:
    """Stream number ``index`` derived from a 64-bit master seed.

    The master seed and the counter tuple feed a ``SeedSequence`` whose output
    keys a Philox counter-based generator, so replication ``i`` gets the same
    stream regardless of how replications are scheduled across threads.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(i) for i in index))
    return RandomStream(np.random.Generator(np.random.Philox(ss)))


def as_stream(source) -> RandomStream:
    """Coerce an int seed, numpy Generator or RandomStream to a RandomStream."""
    if isinstance(source, RandomStream):
        return source
    if isinstance(source, np.random.Generator):
        return RandomStream(source)
    if source is None or isinstance(source, (int, np.integer)):
        return RandomStream(np.random.default_rng(source))
    raise TypeError(f"cannot build a random stream from {type(source).__name__}")

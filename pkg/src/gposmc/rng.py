"""Splittable random-number streams.

Every stochastic operation in the package takes an explicit stream (or a
``numpy.random.Generator`` derived from one). Streams are addressed by a
root seed plus a key path, so any unit of work can be handed an
independent substream whose draws depend only on ``(seed, key)`` and the
call sequence -- never on scheduling or worker count.
"""

from __future__ import annotations

import operator

import numpy as np


class RngStream:
    """A counter-based random stream identified by ``(seed, key)``.

    ``child(*key)`` derives an independent substream deterministically;
    ``generator()`` materialises a fresh ``numpy.random.Generator`` whose
    draws are a pure function of the stream identity.
    """

    __slots__ = ("seed", "key")

    def __init__(self, seed: int, key: tuple = ()):
        # index() rejects floats outright; silent truncation here would
        # let two distinct key paths collide
        self.seed = operator.index(seed)
        self.key = tuple(operator.index(k) for k in key)

    def child(self, *key: int) -> "RngStream":
        """Derive the substream addressed by appending ``key`` to this stream's path."""
        return RngStream(self.seed, self.key + key)

    def children(self, n: int) -> list["RngStream"]:
        """The first ``n`` numbered substreams, e.g. one per parallel work unit."""
        return [self.child(i) for i in range(n)]

    def generator(self) -> np.random.Generator:
        """A fresh PCG64 generator seeded from this stream's identity."""
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"

    def __eq__(self, other):
        return isinstance(other, RngStream) and (self.seed, self.key) == (other.seed, other.key)

    def __hash__(self):
        return hash((self.seed, self.key))

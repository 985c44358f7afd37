"""Counter-based random streams.

Every stream is identified by (seed, stream_id) and keeps a draw counter.
Each call opens a fresh Philox generator keyed by (seed, stream_id) at a
counter block derived from the current draw count, so the values returned
are a pure function of (seed, stream_id, counter, kind, n).  Restoring the
counter replays the exact same values; distinct stream ids never overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

_MASK64 = (1 << 64) - 1

# Stream-id namespaces.  Composite ids are NAMESPACE << 32 | index so that
# per-clip / per-chunk streams stay disjoint.
CLIP_GEN = 1
PROJECTOR = 2
MODEL_INIT = 3
TRAIN_SAMPLER = 4
FLOW_TAU = 5
FLOW_NOISE = 6
AUGMENT = 7
ROLLOUT_VIDEO = 8
ROLLOUT_ACTION = 9


def stream_id(namespace: int, index: int = 0) -> int:
    return ((namespace << 32) | (index & 0xFFFFFFFF)) & _MASK64


@dataclass
class RngStream:
    """Splittable counter-based source of random values."""

    seed: int
    stream_id: int = 0
    counter: int = 0

    def _generator(self) -> Generator:
        key = (self.seed & _MASK64) | ((self.stream_id & _MASK64) << 64)
        # A 2^192 stride per draw leaves room for the variable word
        # consumption of rejection sampling inside one call.
        return Generator(Philox(counter=self.counter << 192, key=key))

    def clone(self) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.counter)

    def normal(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("draw count must be >= 0")
        values = self._generator().standard_normal(n)
        self.counter += n
        return values

    def uniform(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("draw count must be >= 0")
        values = self._generator().random(n)
        self.counter += n
        return values

    def categorical(self, weights, n: int) -> np.ndarray:
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("categorical weights must be a non-empty vector")
        if np.any(w < 0):
            raise ValueError("categorical weights must be nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("categorical weights must not all be zero")
        cdf = np.cumsum(w / total)
        cdf[-1] = 1.0
        u = self.uniform(n)
        return np.searchsorted(cdf, u, side="right").astype(np.int64)

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """Uniform integers in [low, high)."""
        if high <= low:
            raise ValueError("empty integer range")
        u = self.uniform(n)
        vals = low + np.floor(u * (high - low)).astype(np.int64)
        return np.minimum(vals, high - 1)


def draw(rng: RngStream, kind: str, n: int, weights=None) -> np.ndarray:
    """Draw `n` values of the given kind, advancing the counter by exactly n."""
    if kind == "normal":
        return rng.normal(n)
    if kind == "uniform":
        return rng.uniform(n)
    if kind == "categorical":
        if weights is None:
            raise ValueError("categorical draws need weights")
        return rng.categorical(weights, n)
    raise ValueError(f"unknown draw kind: {kind!r}")

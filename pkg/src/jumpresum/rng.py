"""Per-trajectory random streams.

Every trajectory owns an independent Philox stream keyed by the master seed,
with the trajectory index in the high word of the 256-bit counter. Draw ``k``
of trajectory ``i`` is therefore a fixed number regardless of how
trajectories are batched, chunked or distributed over workers.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def trajectory_generator(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Generator for trajectory ``index``; ``stream`` separates unrelated uses."""
    if not 0 <= seed <= _MASK64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    if index < 0:
        raise ValueError("trajectory index must be non-negative")
    bits = np.random.Philox(key=[seed, stream], counter=[0, 0, 0, index])
    return np.random.Generator(bits)


def uniform_table(seed: int, indices, n_draws: int, stream: int = 0) -> np.ndarray:
    """Uniform draws in [0, 1), one row per trajectory index.

    Row ``r`` holds the first ``n_draws`` values of trajectory ``indices[r]``.
    Streams are prefix-consistent, so asking for more draws later extends the
    same sequence.
    """
    indices = np.asarray(indices, dtype=np.int64)
    out = np.empty((len(indices), n_draws))
    for r, i in enumerate(indices):
        out[r] = trajectory_generator(seed, int(i), stream).random(n_draws)
    return out


class DrawTable:
    """Lazily extended table of per-trajectory uniforms.

    Most trajectories need only a few draws; the rare deep ones get their row
    regenerated at a larger width from the same stream.
    """

    def __init__(self, seed: int, indices, initial_width: int = 8, stream: int = 0):
        self.seed = seed
        self.stream = stream
        self.indices = np.asarray(indices, dtype=np.int64)
        self.table = uniform_table(seed, self.indices, initial_width, stream)
        self.filled = np.full(len(self.indices), initial_width, dtype=np.int64)
        self.used = np.zeros(len(self.indices), dtype=np.int64)

    def take(self, rows) -> np.ndarray:
        """Next unused draw for each (local) row in ``rows``; rows must be distinct."""
        rows = np.asarray(rows, dtype=np.int64)
        short = rows[self.used[rows] >= self.filled[rows]]
        if short.size:
            self._extend(short)
        vals = self.table[rows, self.used[rows]]
        self.used[rows] += 1
        return vals

    def _extend(self, rows: np.ndarray) -> None:
        width = int(2 * self.filled[rows].max())
        if width > self.table.shape[1]:
            grown = np.full((len(self.indices), width), np.nan)
            grown[:, : self.table.shape[1]] = self.table
            self.table = grown
        for r in rows:
            gen = trajectory_generator(self.seed, int(self.indices[r]), self.stream)
            self.table[r, :width] = gen.random(width)
            self.filled[r] = width

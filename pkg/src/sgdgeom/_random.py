"""Seeded, splittable random streams.

Every stochastic routine draws from a Philox counter-based generator keyed by
``(seed, *path)``. Chunked sampling derives one child stream per chunk index so
a prefix of a large sample is bit-identical to a smaller sample with the same
seed (nested streams).
"""

from __future__ import annotations

import numpy as np

# Fixed so that nested samples line up regardless of the requested size.
CHUNK_SIZE = 1 << 16


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for ``seed`` at the spawn key ``path``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def chunk_bounds(n: int, chunk_size: int = CHUNK_SIZE):
    """Yield ``(chunk_index, start, stop)`` covering ``range(n)``."""
    for c, start in enumerate(range(0, n, chunk_size)):
        yield c, start, min(start + chunk_size, n)


def gaussian_inputs(n: int, seed: int, mean: float = 0.0, variance: float = 1.0,
                    tag: int = 0) -> np.ndarray:
    """Draw ``n`` i.i.d. Gaussian inputs on nested chunk streams."""
    out = np.empty(n)
    scale = np.sqrt(variance)
    for c, a, b in chunk_bounds(n):
        rng = stream(seed, tag, c)
        out[a:b] = mean + scale * rng.standard_normal(CHUNK_SIZE)[: b - a]
    return out

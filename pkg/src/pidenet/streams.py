"""Counter-based random streams keyed by logical task indices.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, *key)``.  Work is split by logical index (path chunk,
realization number, noise source), never by worker, so results do not
depend on how many threads run the tasks.
"""

from __future__ import annotations

import numpy as np

# Noise sources get fixed sub-keys so they never share a stream.
BROWNIAN = 0
JUMPS = 1
COMPENSATOR = 2
BRIDGE = 3
PROBES = 4

DEFAULT_CHUNK = 4096


def substream(seed: int, *key: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("an explicit seed is required")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def chunks(n: int, chunk: int = DEFAULT_CHUNK):
    """Yield ``(index, start, stop)`` covering ``range(n)`` in fixed-size blocks."""
    for index, start in enumerate(range(0, n, chunk)):
        yield index, start, min(start + chunk, n)

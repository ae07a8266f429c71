"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose 128-bit
key is built directly from ``(seed, stream, index)``.  A path's numbers depend
only on that triple, never on how paths are batched or which thread runs
them, so results are reproducible under any degree of parallelism.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_INDEX_BITS = 40

# Stream tags. Keep them stable: changing a value changes every result.
ENV_GAUSS = 1
ENV_JUMPS = 2
BRANCHING = 3
REFINE = 4
LADDER = 5
HARNESS = 6


def substream(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Return the generator for path ``index`` of stream ``stream``."""
    if seed < 0 or index < 0 or stream < 0:
        raise ValueError("seed, stream and index must be non-negative")
    if index >= 1 << _INDEX_BITS or stream >= 1 << (64 - _INDEX_BITS):
        raise ValueError("stream/index out of range")
    word = (stream << _INDEX_BITS) | index
    return np.random.Generator(np.random.Philox(key=[seed & _MASK64, word]))


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministically derive a child seed (e.g. one per t-grid point)."""
    state = np.random.SeedSequence([seed & _MASK64, *labels]).generate_state(1, np.uint64)
    return int(state[0])

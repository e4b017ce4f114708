"""Counter-based random streams.

Every random draw in the package comes from ``numpy.random.Philox`` (the
Philox-4x64-10 counter-based generator of Salmon et al.) keyed by the pair
``(seed, stream_id)``.  The 128-bit Philox key is ``[seed, stream_id]`` and the
counter starts at zero, so two streams with different ids are independent and
each stream is reproducible on its own, regardless of how many other streams
were consumed before it or on which thread.

Stream ids are built from a purpose tag in the top 16 bits and an index in the
lower 48 bits.
"""
from __future__ import annotations

import numpy as np

FIELD = 1
REPLICA = 2
PATHS = 3
START = 4
CHAIN = 5

_MASK64 = (1 << 64) - 1
_MASK48 = (1 << 48) - 1


def stream_id(purpose: int, index: int = 0) -> int:
    """Compose a 64-bit stream id from a purpose tag and an index."""
    if index < 0 or index > _MASK48:
        raise ValueError(f"stream index out of range: {index}")
    return ((int(purpose) & 0xFFFF) << 48) | int(index)


def generator(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Return a ``numpy.random.Generator`` on the Philox stream ``(seed, purpose, index)``.

    Parameters
    ----------
    seed : int
        Master seed, reduced modulo 2**64.
    purpose : int
        One of the module-level purpose tags (``FIELD``, ``REPLICA``, ...).
    index : int, optional
        Sub-stream index, e.g. the replica number.
    """
    key = np.array([int(seed) & _MASK64, stream_id(purpose, index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

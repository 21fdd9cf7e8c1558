"""Counter-based random streams keyed by (seed, tags).

Every stochastic routine in towerlab derives its randomness from
``stream(seed, *tags)``.  The underlying bit generator is Philox, a
counter-based generator: two streams with different keys are independent
and a given key always reproduces the same sequence, regardless of how
many other streams exist or which thread consumes them.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_word(tags: tuple) -> int:
    """Stable 64-bit hash of the tag tuple (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(repr(tags).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *tags) -> np.random.Generator:
    """Return the generator keyed by (seed, tags).

    Tags may be strings or integers; they select independent substreams
    of the same global seed (e.g. ``stream(seed, "ld", batch_index)``).
    """
    key = np.array([seed & _MASK64, _tag_word(tags)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

"""Counter-based random streams.

Every stochastic component draws from a Philox generator keyed by
(seed, purpose) with the frame index as counter, so any frame of any
video can be reproduced in isolation and results do not depend on
evaluation order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = (1 << 64) - 1


def purpose_key(purpose: str) -> int:
    """Stable 64-bit hash of a purpose tag (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, purpose: str, frame: int = 0) -> np.random.Generator:
    """Independent generator for (seed, purpose, frame)."""
    key = np.array([seed & _U64, purpose_key(purpose)], dtype=np.uint64)
    counter = np.array([frame & _U64, 0, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def derive_seed(seed: int, purpose: str) -> int:
    """Deterministically derive a child seed for a named sub-task."""
    return int(stream(seed, purpose).integers(0, 1 << 63, dtype=np.int64))

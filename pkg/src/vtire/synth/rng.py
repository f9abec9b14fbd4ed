"""Seeded random streams.

All randomness comes from numpy's Philox-4x64 counter-based generator. A
stream is keyed by ``(seed, purpose...)``: the purpose labels are hashed with
BLAKE2b into 32-bit words and passed as the ``spawn_key`` of a
``SeedSequence``, so independent purposes (terrain layout, sensor noise,
corruption, ...) never share a stream and adding a new purpose cannot shift
an existing one.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def _word(label) -> int:
    h = hashlib.blake2b(str(label).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(h, "little")


def stream(seed: int, *purpose) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(_word(p) for p in purpose))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *purpose) -> int:
    """64-bit child seed for ``purpose`` (used to key individual samples)."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(_word(p) for p in purpose))
    return int(ss.generate_state(1, np.uint64)[0])

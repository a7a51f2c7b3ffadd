"""Deterministic random stream derivation.

All randomness in the package flows from one 64-bit root seed.  Substreams
are counter-based (Philox) and keyed by small integer tuples, so Monte
Carlo work can be partitioned without any stream overlap and results are
bit-reproducible for a fixed (seed, key) pair.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _sequence(seed: int, key: tuple[int, ...]) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(int(k) for k in key))


def substream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the given root seed and integer key path."""
    return np.random.Generator(np.random.Philox(_sequence(seed, key)))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit child seed; feeding it back into substream stays deterministic."""
    return int(_sequence(seed, key).generate_state(1, np.uint64)[0])

"""Seeding conventions shared by every randomized component.

All randomness in this package flows through numpy ``Generator`` objects
backed by the Philox4x64 counter-based bit generator.  Philox is keyed
directly by the user-supplied 64-bit seed, so identical seeds produce
bit-identical projections, probe orders, and draws on any platform, and
the scheme is reproducible from the documented name alone.
"""

from __future__ import annotations

import numpy as np

__all__ = ["generator", "spawn_seeds"]


def generator(seed: int) -> np.random.Generator:
    """Return the package-standard generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def spawn_seeds(seed: int, n: int) -> np.ndarray:
    """Derive ``n`` independent 64-bit child seeds from a root seed.

    Children are drawn from the root's own Philox stream, so the mapping
    (seed, n) -> children is deterministic.
    """
    return generator(seed).integers(0, 2**64, size=n, dtype=np.uint64)

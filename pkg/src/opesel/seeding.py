"""Sub-seed derivation.

Every random stream in the package comes from ``derive_seed(master, *keys)``,
a SplitMix64 chain over the master seed and integer keys. The result depends
only on its arguments, so episodes and fits can be produced in any order.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Fold integer keys into ``master``; returns a 64-bit unsigned seed."""
    h = splitmix64(int(master) & _MASK)
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK))
    return h


def make_rng(master: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *keys)))

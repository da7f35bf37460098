"""Named, splittable seeded generators.

Every stochastic routine takes an explicit ``np.random.Generator``; nothing
reads global random state. ``derive(seed, "zoo", "sinusoid", 3)`` always gives
the same stream for the same path of names.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive(seed: int, *names) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed for handing to a sub-task."""
    return int(rng.integers(0, 2**63 - 1))


def split(rng: np.random.Generator, n: int) -> list:
    return list(rng.spawn(n))

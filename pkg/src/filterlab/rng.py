"""Named, seeded random streams.

Every stochastic routine takes an explicit ``numpy.random.Generator``;
nothing in the package touches global random state.
"""
import zlib

import numpy as np


def stream(seed, name="default"):
    """Independent generator identified by ``(seed, name)``.

    The same pair always yields the same sequence, on every platform
    numpy's PCG64 supports.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), key])))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)

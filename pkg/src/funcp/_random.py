"""Counter-based random streams.

Every stochastic draw in the package goes through :func:`stream`, which keys a
Philox-4x64 generator with a hash of ``(seed, *keys)``. Philox is counter based,
so the bits produced for a given key do not depend on platform or on how many
other streams were consumed before it. Dataset generation keys streams by
sample index, which makes sample ``i`` identical regardless of dataset size or
generation order.
"""

import zlib

import numpy as np


def _as_int(key):
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFFFFFFFFFF


def stream(seed, *keys):
    """Return a ``numpy.random.Generator`` for ``seed`` and integer/str keys."""
    entropy = [_as_int(seed)] + [_as_int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

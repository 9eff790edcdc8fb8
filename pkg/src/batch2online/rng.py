"""Seeded, counter-based random streams with named substreams.

Every random decision in the package draws from ``substream(seed, *path)``,
where ``path`` names the purpose (``"step", t`` or ``"trial", j``).  The
generator is Philox, so a substream is a pure function of ``(seed, path)``
and independent runs can replay identical randomness.
"""
import zlib

import numpy as np


def _path_key(part):
    if isinstance(part, (bool, np.bool_)):
        raise TypeError("substream path parts must be str or int")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("substream path integers must be non-negative")
        return int(part)
    if isinstance(part, str):
        # crc32 is stable across interpreter runs, unlike hash()
        return zlib.crc32(part.encode("utf-8")) | (1 << 32)
    raise TypeError(f"unsupported substream path part {part!r}")


def substream(seed, *path):
    """Return a ``numpy.random.Generator`` for ``seed`` and a named path."""
    if isinstance(seed, np.random.Generator):
        raise TypeError("pass an integer seed, not a Generator")
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_path_key(p) for p in path))
    return np.random.Generator(np.random.Philox(seq))


def as_generator(rng):
    """Accept an int seed or a Generator; ints map to the root substream."""
    if isinstance(rng, np.random.Generator):
        return rng
    return substream(rng)


def child_seed(rng):
    """Draw an integer seed from ``rng`` for code that wants plain ints."""
    return int(rng.integers(0, 2**63 - 1))

"""Counter-based random streams keyed by (seed, name)."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Returns an independent generator for one named quantity.

    Each stream is a Philox generator whose key mixes the run seed with a CRC32
    of ``name``. Draws from one stream never shift another, so adding a new
    random parameter leaves every existing draw unchanged.

    Args:
        seed: Non-negative run seed.
        name: Label of the quantity, e.g. ``"cournot/a"``.

    Returns:
        A numpy Generator.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) | zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.Philox(key=key))


def int_seed(seed: int, name: str) -> int:
    """Derives a 32-bit integer seed for libraries that only accept ints."""
    return int(stream(seed, name).integers(0, 2**31 - 1))

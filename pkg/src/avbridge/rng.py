"""Named, counter-based random streams.

Every random draw in the project comes from a Philox generator keyed by
(seed, stream name, *indices). Streams are independent and replayable
bit-exactly across platforms, which makes training resumable without
serializing generator state: step-dependent draws just use the step index.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """A fresh generator for the (seed, name, indices) coordinate."""
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key, *map(int, indices)))
    return np.random.Generator(np.random.Philox(ss))


def normal(seed: int, name: str, shape, *indices: int, dtype=np.float32) -> np.ndarray:
    """Standard-normal draw from the named stream."""
    return stream(seed, name, *indices).standard_normal(shape, dtype=np.float64).astype(dtype)

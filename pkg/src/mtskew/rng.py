"""Counter-based random streams keyed by a global seed and a stream index.

Every consumer draws from ``Philox`` with the 128-bit key
``(seed << 64) | (tag << 48) | index``, so results never depend on the
order in which orbits, cells or workers are processed.
"""
import numpy as np

TAGS = {
    "orbit": 0,
    "ulam": 1,
    "sigma": 2,
    "curves": 3,
    "critical": 4,
    "recurrence": 5,
    "uniqueness": 6,
    "distortion": 7,
}
_MASK64 = (1 << 64) - 1


def key_for(seed: int, index: int = 0, stream: str = "orbit") -> int:
    seed = int(seed)
    index = int(index)
    if not (0 <= seed <= _MASK64):
        raise ValueError("seed must be a 64-bit unsigned integer")
    if not (0 <= index < (1 << 48)):
        raise ValueError("stream index out of range")
    return (seed << 64) | (TAGS[stream] << 48) | index


def generator(seed: int, index: int = 0, stream: str = "orbit") -> np.random.Generator:
    """Independent generator for ``(seed, stream, index)``."""
    return np.random.Generator(np.random.Philox(key=key_for(seed, index, stream)))

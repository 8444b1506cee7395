"""Seeded random streams.

Every random draw in the package comes from :func:`stream`.  A stream is a
numpy ``Generator`` backed by PCG64, seeded from a ``SeedSequence`` whose
entropy is the 64-bit user seed followed by one 32-bit word per label.
String labels are hashed with CRC-32 (stable across processes and Python
versions, unlike ``hash``); integer labels are used as-is.  Two calls with the
same seed and labels return generators that produce identical draws.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_word(label: str | int) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if label < 0:
            raise ValueError(f"negative stream label {label}")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed: int, *labels: str | int) -> np.random.Generator:
    """Return the generator for ``(seed, *labels)``."""
    seed = int(seed) & _MASK64
    entropy = [seed & 0xFFFFFFFF, seed >> 32] + [_label_word(x) for x in labels]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *labels: str | int) -> int:
    """A child 64-bit seed, for handing to code that takes an integer seed."""
    return int(stream(seed, "derive", *labels).integers(0, 2**63))

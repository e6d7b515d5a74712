"""Named, reproducible random substreams derived from one seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Generator for ``(seed, name, *keys)``; independent of call order."""
    return np.random.default_rng([int(seed), stream_key(name), *(int(k) for k in keys)])


def derive_seed(seed: int, name: str) -> int:
    return int(substream(seed, name).integers(0, 2**63 - 1))

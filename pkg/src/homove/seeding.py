"""Hierarchical seed splitting.

Every random stream in the package is derived from a root integer seed plus a
tuple of integer keys, so that streams for different consumers never overlap
and any one of them can be recreated in isolation.
"""

import zlib

import numpy as np

# stable integer tags for the named streams
_TAGS = {}


def tag(name: str) -> int:
    """Stable 32-bit integer for a stream name (crc32, not Python's hash)."""
    if name not in _TAGS:
        _TAGS[name] = zlib.crc32(name.encode()) & 0xFFFFFFFF
    return _TAGS[name]


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        entropy.append(tag(k) if isinstance(k, str) else int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.SeedSequence(entropy)


def rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; strings are hashed to tags."""
    return np.random.default_rng(seed_sequence(seed, *keys))


def child_seed(seed: int, *keys) -> int:
    """A derived 63-bit integer seed, for places that want a plain int."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

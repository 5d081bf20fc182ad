"""
Seed splitting and generator construction.

All randomness in a run funnels through one root seed. Sub-seeds are
derived with :func:`derive_seed`, which feeds the root seed and a path of
tags into numpy's ``SeedSequence``; string tags are folded to integers
with CRC-32 so the mapping is stable across processes and platforms.
Generators are Philox-4x64 (counter based), whose streams are identical
on every platform numpy supports.
"""

import zlib

import numpy as np


def _tag_value(tag):
    if isinstance(tag, str):
        return zlib.crc32(tag.encode('utf-8'))
    value = int(tag)
    if value < 0:
        raise ValueError(f"seed tags must be non-negative, got {value}")
    return value


def derive_seed(root, *tags):
    """
    Derive a 64-bit sub-seed from a root seed and a tag path.

    Args:
        root: Root seed of the run (non-negative integer)
        *tags: Strings or non-negative integers naming the substream,
            e.g. ``derive_seed(seed, 'datagen', band, row)``

    Returns:
        Integer in [0, 2**64)
    """
    sequence = np.random.SeedSequence(
        entropy=int(root),
        spawn_key=tuple(_tag_value(tag) for tag in tags),
    )
    state = sequence.generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def make_rng(root, *tags):
    """Return a Philox-backed generator for the substream ``(root, *tags)``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(root, *tags)))

"""Named deterministic random streams.

Every random draw in a run comes from a stream derived from the run seed and
a stream path (for example ``("policy", agent_id)``). Streams are mutually
independent, so adding or removing one consumer of randomness never perturbs
the draws seen by the others. This is what makes runs with identical seeds
bit-identical and lets a no-sharing run match a sharing run step for step on
the environment side.

Split function: the path elements are mapped to unsigned integers (ints used
as-is, strings via CRC-32 of their UTF-8 bytes) and appended to the base seed
to form the entropy of a ``numpy.random.SeedSequence``.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be nonnegative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"stream keys must be int or str, got {type(key).__name__}")


def derive_rng(seed: int, *path) -> np.random.Generator:
    """Return the generator for stream ``path`` under ``seed``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))

"""Counter-style deterministic RNG derivation.

Every random draw in the package comes from a generator keyed by
(seed, *tags) instead of a shared sequential stream. Results therefore never
depend on call order, on how much randomness earlier stages consumed, or on
whether a run was interrupted and resumed.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Generator keyed by (seed, tags); the same key always yields the same stream."""
    entropy = [int(seed) & _MASK64] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *tags) -> int:
    """Stable 32-bit integer derived from (seed, tags), for APIs that want an int seed."""
    return int(rng_for(seed, *tags).integers(0, 2**31 - 1))

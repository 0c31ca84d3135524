"""Named deterministic random streams derived from one master seed.

Every stochastic consumer (weight init, diffusion noise, data order,
dropout, ...) pulls its own Generator keyed by string labels, so adding a
draw to one stream never perturbs another, and any single stream can be
reproduced in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag):
    digest = hashlib.blake2s(str(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_stream(master_seed, *tags):
    """A fresh np.random.Generator for (master_seed, *tags).

    Tags may be strings or ints; strings are hashed to stable 64-bit keys.
    Same arguments, same stream, always.
    """
    keys = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        keys.append(tag & 0xFFFFFFFFFFFFFFFF if isinstance(tag, int) else _tag_to_int(tag))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))


def child_seed(master_seed, *tags):
    """A derived 63-bit integer seed for handing to a sub-component."""
    return int(seed_stream(master_seed, *tags).integers(0, 2**63 - 1))

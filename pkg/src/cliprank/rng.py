"""Labelled random streams derived from a single master seed.

Every source of randomness in the pipeline (parameter init, per-epoch
shuffles, per-example sampling, evaluation draws) gets its own generator
derived from the run seed plus a fixed label path, e.g.
``derive_rng(seed, "example", epoch, video_index)``.  Streams are therefore
independent, reproducible, and re-derivable at any point — resuming a run at
an epoch boundary re-creates exactly the generators an uninterrupted run
would have used.

String labels are hashed with BLAKE2b (stable across platforms and Python
versions; the builtin ``hash`` is salted and must not be used here).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_rng", "derive_seed_sequence"]

_MASK64 = (1 << 64) - 1


def _label_to_int(label: str | int) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed_sequence(seed: int, *labels: str | int) -> np.random.SeedSequence:
    """SeedSequence for the stream named by ``labels`` under master ``seed``."""
    entropy = [int(seed) & _MASK64] + [_label_to_int(x) for x in labels]
    return np.random.SeedSequence(entropy)


def derive_rng(seed: int, *labels: str | int) -> np.random.Generator:
    """Independent PCG64 generator for the stream named by ``labels``."""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, *labels)))

"""Deterministic random-stream splitting.

Every stochastic stage (init, augmentation, splitting, synthesis, ...) draws
from its own stream derived from the run seed plus a purpose tag, so any one
stage is reproducible in isolation and streams never interleave.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, *tags: object) -> np.random.Generator:
    """Return a generator for `seed` scoped to a purpose tag path."""
    label = "/".join(str(t) for t in tags)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    tag_int = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), tag_int])))

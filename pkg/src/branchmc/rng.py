"""Deterministic random-stream derivation.

A single master seed expands into independent substreams keyed by small
integers: stream ``(seed, k1, k2, ...)`` is a PCG64 generator seeded with
``SeedSequence((seed, k1, k2, ...))``.  Replica i of an experiment uses key
``(seed, ..., i)``, so replica scheduling never aliases streams and reruns
are bit-reproducible.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for the given master seed and integer key path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *key))))

"""Deterministic random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
obtained through :func:`stream`.  A stream is identified by a root seed, a
purpose label (``"train"``, ``"test-set"``, ``"init/encoder"``, ...) and an
integer index.  The label is hashed with SHA-256 and the first 8 bytes are
folded into the ``SeedSequence`` entropy, so streams for different purposes
never overlap and adding a new purpose does not perturb existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(seed: int, label: str, index: int = 0) -> np.random.SeedSequence:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be nonnegative")
    return np.random.SeedSequence([int(seed), label_key(label), int(index)])


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the generator for ``(seed, label, index)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, label, index)))

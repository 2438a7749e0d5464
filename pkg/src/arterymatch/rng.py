"""Seeded, named random streams.

All randomness in the package flows from one integer seed through
``stream(seed, *path)``.  The path is a sequence of strings/ints naming the
consumer (e.g. ``stream(7, "synth", "case", 12)``), hashed with SHA-256 into
a 128-bit key for a Philox counter generator.  Streams with different paths
are independent, and the same (seed, path) always yields the same stream, so
components may run in any order (or in parallel) without changing results.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "derive_seed"]


def derive_seed(seed: int, *path: object) -> int:
    """Derive a 128-bit child seed from a root seed and a name path."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode("ascii"))
    for part in path:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "little")


def stream(seed: int, *path: object) -> np.random.Generator:
    """Return an independent ``numpy`` generator for (seed, path)."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *path)))

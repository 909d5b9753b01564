"""Stable sub-seed derivation.

Parallel work units (trees, bootstrap draws, synthetic patients) each get
their own RNG seeded by a hash of the base seed and the unit index, so
results do not depend on scheduling or worker count. Python's builtin
hash() is salted per process and must not be used here.
"""

from __future__ import annotations

import hashlib


def subseed(*parts: int | str) -> int:
    """Derive a 63-bit seed from a base seed and any number of indices."""
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little") >> 1

"""Seeded random streams, one per (module name, step).

Every source of randomness in a run draws from a stream derived from the
root seed by hashing (seed, name, step).  Streams are mutually independent,
so toggling one mechanism (say, the moderation phase) never shifts the
draws seen by another.  That is what makes cross-case comparisons at a
fixed seed meaningful.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(root_seed: int, name: str, step: int = 0) -> int:
    """Map (root seed, stream name, step) to a 64-bit child seed."""
    payload = f"{root_seed}:{name}:{step}".encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big")


class StreamRegistry:
    """Hands out `random.Random` instances keyed by (name, step).

    The same key always yields a stream seeded identically, but each call
    returns a fresh generator, so callers cannot leak state into each other
    by consuming draws.
    """

    def __init__(self, root_seed: int):
        self.root_seed = root_seed

    def stream(self, name: str, step: int = 0) -> random.Random:
        return random.Random(derive_seed(self.root_seed, name, step))

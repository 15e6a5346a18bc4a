"""Deterministic fan-out of one global seed into named sub-streams.

Every random choice in the pipeline (synthesis, augmentation, weight init,
shuffling, dropout) draws from a stream derived here, so a single seed pins
the whole run and components can be re-seeded independently of each other.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["named_rng", "named_seed_sequence"]


def _name_key(name: str) -> int:
    # crc32 is stable across platforms and Python versions, unlike hash().
    return zlib.crc32(name.encode("utf-8"))


def named_seed_sequence(seed: int, name: str, *indices: int) -> np.random.SeedSequence:
    """SeedSequence for sub-stream `name`, optionally indexed (e.g. per sample)."""
    return np.random.SeedSequence([int(seed), _name_key(name), *map(int, indices)])


def named_rng(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for sub-stream `name`; same arguments always give the same stream."""
    return np.random.default_rng(named_seed_sequence(seed, name, *indices))

"""Deterministic random-stream derivation.

Every command takes one root seed; independent consumers get their own
named substream so that adding a consumer does not shift anyone else's
random numbers.
"""
from __future__ import annotations

import zlib

import numpy as np


def sub_seed(root_seed: int, name: str) -> np.random.SeedSequence:
    """Seed sequence for the named substream of ``root_seed``."""
    return np.random.SeedSequence((int(root_seed) & 0xFFFFFFFFFFFFFFFF,
                                   zlib.crc32(name.encode("utf-8"))))


def sub_rng(root_seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of ``root_seed``."""
    return np.random.default_rng(sub_seed(root_seed, name))

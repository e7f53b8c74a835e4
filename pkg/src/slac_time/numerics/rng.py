"""Seeded random streams.

All randomness comes from Philox (a counter-based generator) keyed by the
master seed plus a label and optional integer coordinates, so each consumer
(split, init, dropout, kmeans, generator) can be reproduced on its own.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, label: str, *coords: int) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8"))]
    key.extend(int(c) & 0xFFFFFFFF for c in coords)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

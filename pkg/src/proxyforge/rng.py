"""Seeded random streams.

Every stream is a Philox4x64 generator keyed by a ``SeedSequence`` built from
the user seed plus a spawn key ``(domain, index)``. The index is the unit of
parallel work (a chunk of search samples, one simulated experiment), so a
worker that owns index ``i`` draws exactly what a serial run would draw for
``i``, whatever the thread count.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, domain: str, index: int) -> np.random.Generator:
    tag = zlib.crc32(domain.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(tag, int(index)))
    return np.random.Generator(np.random.Philox(ss))

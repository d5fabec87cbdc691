"""Named, reproducible random streams derived from one global seed."""

from __future__ import annotations

import zlib

import numpy as np

CODEBOOK_INIT = "codebook-init"
GUMBEL_STAGE1 = "gumbel-stage1"
GUMBEL_STAGE2 = "gumbel-stage2"


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; stable across runs and platforms."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())]))

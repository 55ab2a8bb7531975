"""Deterministic seed derivation so parallel builds are schedule-independent."""
from __future__ import annotations

import zlib

import numpy as np


def _component(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(global_seed: int, *parts) -> int:
    """A stable child seed for (global_seed, parts); order-sensitive."""
    seq = np.random.SeedSequence([int(global_seed) & 0xFFFFFFFF] + [_component(p) for p in parts])
    return int(seq.generate_state(1, np.uint64)[0])


def derive_rng(global_seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(global_seed, *parts))

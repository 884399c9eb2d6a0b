from __future__ import annotations

import zlib

import numpy as np

STREAM_INIT = 1
STREAM_DROPOUT = 2
STREAM_SHUFFLE = 3
STREAM_FEATURES = 4
STREAM_NOISE = 5
STREAM_SPLIT = 6
STREAM_PROTOTYPES = 7


def role_key(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


def derive_seed(seed: int, label: str) -> int:
    return int(np.random.SeedSequence([int(seed), role_key(label)]).generate_state(1)[0])


def stream_rng(seed: int, stream: int, role: str = "") -> np.random.Generator:
    """Independent generator per (seed, purpose, role); draws in one stream never shift another."""
    return np.random.default_rng([int(seed), int(stream), role_key(role)])

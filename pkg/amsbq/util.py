import zlib
from typing import Iterable

import numpy as np

from .logging import get_logger

logger = get_logger("util")


def _stream_key(key: int | str) -> int:
    # SeedSequence spawn keys must be non-negative integers, strings are mapped onto a stable 32 bit hash
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))

    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")

    return int(key)


def make_seed_sequence(seed: int, *stream: int | str) -> np.random.SeedSequence:
    """
    Derive an independent, reproducible seed sequence for a named sub-stream of a run.

    Streams are identified by a path of keys, e.g. ``make_seed_sequence(seed, "restarts", 12)``. The same path always
    yields the same sequence, different paths yield statistically independent ones.
    """
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_stream_key(key) for key in stream))


def make_rng(seed: int | np.random.SeedSequence, *stream: int | str) -> np.random.Generator:
    # Philox is counter-based, so splitting streams never introduces overlap
    if isinstance(seed, np.random.SeedSequence):
        keys = tuple(_stream_key(key) for key in stream)
        seed_sequence = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    else:
        seed_sequence = make_seed_sequence(seed, *stream)

    return np.random.Generator(np.random.Philox(seed_sequence))


def format_number(value: float | int) -> str:
    return "%.12g" % value


def parse_seed_list(value: str | int | Iterable[int]) -> list[int]:
    if isinstance(value, int):
        return [value]

    if isinstance(value, str):
        parts = [part.strip() for part in value.split(",")]
        return [int(part) for part in parts if part]

    return [int(v) for v in value]

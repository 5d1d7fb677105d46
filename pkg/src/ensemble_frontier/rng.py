"""Seed derivation and counter-based random streams.

Every random quantity in the package is derived from one top-level integer
seed plus a tuple of keys naming where the draw happens, e.g.
``("cohort", family_index)`` or ``("search", "candidate", 17)``.  Keys are
folded into a :class:`numpy.random.SeedSequence` spawn key, so the mapping is
stable across platforms and Python versions (string keys are hashed with
SHA-256, never with the builtin ``hash``).

Streams that must be seekable (the synthetic cohort generator) use Philox in
counter mode: element ``k`` of a stream is the ``k``-th raw 64-bit output and
can be produced without generating elements ``0..k-1``.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

__all__ = [
    "derive_seed_sequence",
    "derive_seed",
    "generator",
    "raw_block",
    "uniform_block",
    "normal_block",
]

_MASK32 = 0xFFFFFFFF


def _key_words(key) -> list[int]:
    if isinstance(key, (bool, np.bool_)):
        return [int(key)]
    if isinstance(key, (int, np.integer)):
        k = int(key)
        if k < 0:
            raise ValueError(f"integer keys must be non-negative, got {k}")
        words = []
        while True:
            words.append(k & _MASK32)
            k >>= 32
            if not k:
                return words
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return [int.from_bytes(digest[i : i + 4], "little") for i in (0, 4)]
    raise TypeError(f"unsupported key type {type(key).__name__}")


def derive_seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    spawn_key: list[int] = []
    for key in keys:
        spawn_key.extend(_key_words(key))
    return np.random.SeedSequence(int(seed), spawn_key=tuple(spawn_key))


def derive_seed(seed: int, *keys) -> int:
    """Child seed (a 64-bit integer) for the draw site named by ``keys``."""
    state = derive_seed_sequence(seed, *keys).generate_state(1, np.uint64)
    return int(state[0])


def generator(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed_sequence(seed, *keys)))


def _philox(seed: int, keys: tuple) -> np.random.Philox:
    key = derive_seed_sequence(seed, *keys).generate_state(2, np.uint64)
    return np.random.Philox(key=key)


def raw_block(seed: int, keys: tuple, start: int, count: int) -> np.ndarray:
    """Raw uint64 outputs ``start .. start+count-1`` of the stream ``keys``."""
    if start < 0 or count < 0:
        raise ValueError("start and count must be non-negative")
    bitgen = _philox(seed, keys)
    # Philox emits four 64-bit words per counter increment.
    bitgen.advance(start // 4)
    skip = start % 4
    return bitgen.random_raw(count + skip)[skip:]


def uniform_block(seed: int, keys: tuple, start: int, count: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1), 53 bits each."""
    raw = raw_block(seed, keys, start, count)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normal_block(seed: int, keys: tuple, start: int, count: int) -> np.ndarray:
    """Standard normals by inverse CDF, one per raw output, so they are seekable."""
    return ndtri(uniform_block(seed, keys, start, count))

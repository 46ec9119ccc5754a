"""Keyed, counter-based random streams for reproducible parallel simulation.

Every stream is a Philox generator whose key is derived from a tuple such as
(master_seed, "pair", stream_index) through a stable hash, so runs are
reproducible and embarrassingly parallel: any (K, replicate, stream) cell can
be regenerated in isolation, in any order.

`GaussianStreamBank` serves one standard-normal vector per living pair per
diffusion sub-step.  Draws are block-buffered per stream, which keeps the
per-step cost a single fancy-indexing operation; the served sequence per
stream equals the raw generator output regardless of block size.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["key_entropy", "seed_sequence", "generator", "GaussianStreamBank"]


def _token_to_int(token) -> int:
    if isinstance(token, (int, np.integer)):
        return int(token) & 0xFFFFFFFFFFFFFFFF
    if isinstance(token, str):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream key tokens must be int or str, got {type(token)!r}")


def key_entropy(*key) -> list[int]:
    """Flatten a mixed int/str key tuple into stable 64-bit entropy words."""
    tokens: list[int] = []
    for token in key:
        if isinstance(token, (tuple, list)):
            tokens.extend(key_entropy(*token))
        else:
            tokens.append(_token_to_int(token))
    return tokens


def seed_sequence(*key) -> np.random.SeedSequence:
    return np.random.SeedSequence(key_entropy(*key))


def generator(*key) -> np.random.Generator:
    """Philox generator for the given key tuple (counter-based, splittable)."""
    return np.random.Generator(np.random.Philox(seed_sequence(*key)))


class GaussianStreamBank:
    """Per-index standard normal streams with block buffering.

    Stream ``i`` is keyed by (*base_key, i); indices are positive integers
    (the global stream labels of particle pairs).  A retired index must simply
    never be drawn from again: nothing is recycled.
    """

    def __init__(self, base_key: tuple, dim: int, block: int = 128):
        if block < 1:
            raise ValueError("block size must be >= 1")
        self._base_key = tuple(base_key)
        self._dim = int(dim)
        self._block = int(block)
        self._capacity = 0
        self._buf = np.empty((0, self._block, self._dim))
        self._pos = np.empty(0, dtype=np.int64)
        self._gens: list[np.random.Generator | None] = []
        self.touched: set[int] = set()

    @property
    def dim(self) -> int:
        return self._dim

    def _ensure(self, capacity: int) -> None:
        if capacity <= self._capacity:
            return
        new_cap = max(capacity, 2 * self._capacity, 16)
        buf = np.empty((new_cap, self._block, self._dim))
        pos = np.full(new_cap, self._block, dtype=np.int64)
        buf[: self._capacity] = self._buf
        pos[: self._capacity] = self._pos
        self._buf, self._pos = buf, pos
        self._gens.extend([None] * (new_cap - len(self._gens)))
        self._capacity = new_cap

    def _refill(self, idx: int) -> None:
        gen = self._gens[idx]
        if gen is None:
            gen = generator(*self._base_key, idx)
            self._gens[idx] = gen
        self._buf[idx] = gen.standard_normal((self._block, self._dim))
        self._pos[idx] = 0

    def draw(self, indices: np.ndarray) -> np.ndarray:
        """One standard-normal d-vector per index.  Indices must be distinct."""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            return np.empty((0, self._dim))
        self._ensure(int(indices.max()) + 1)
        exhausted = indices[self._pos[indices] >= self._block]
        for idx in exhausted:
            self._refill(int(idx))
        out = self._buf[indices, self._pos[indices], :].copy()
        self._pos[indices] += 1
        self.touched.update(int(i) for i in indices)
        return out

    def draw_one(self, index: int) -> np.ndarray:
        return self.draw(np.array([index]))[0]

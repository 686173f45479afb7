"""Counter-based keyed random streams.

A stream is a (master seed, key) pair.  The key is a tuple of integers and
short strings; the generator for a stream is a Philox bit generator seeded by
``SeedSequence(seed, spawn_key=key)``, so the same pair always produces the
same numbers regardless of which process or in which order it is consumed.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _word(k) -> tuple[int, ...]:
    if isinstance(k, (bool, np.bool_)):
        return (int(k),)
    if isinstance(k, (int, np.integer)):
        k = int(k)
        if k < 0:
            # keep negative counters distinct from positive ones
            return (1, (-k) & _MASK64)
        return (0, k & _MASK64) if k > _MASK64 else (k,)
    if isinstance(k, str):
        h = hashlib.blake2b(k.encode("utf-8"), digest_size=8).digest()
        return (int.from_bytes(h, "little"),)
    if isinstance(k, tuple):
        out: tuple[int, ...] = ()
        for item in k:
            out += _word(item)
        return out
    raise TypeError(f"unsupported stream key element {k!r}")


class RngStream:
    __slots__ = ("seed", "key")

    def __init__(self, seed: int, key: tuple = ()):
        if not isinstance(seed, (int, np.integer)) or seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed) & _MASK64
        self.key = tuple(key)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"

    def child(self, *key) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def spawn_key(self) -> tuple[int, ...]:
        return _word(self.key)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key())
        return np.random.Generator(np.random.Philox(ss))


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError("expected an RngStream or an integer seed")

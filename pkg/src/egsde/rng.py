"""Counter-based random streams.

Every draw is keyed by (seed, stream_id, call index): the triple is hashed
into a Philox key and a fresh generator produces the block. Draws are
therefore bit-reproducible, independent of evaluation order across streams,
and cheap to fork (one stream per trajectory).
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RandomStream:
    """One logical sequence of random blocks; counter advances per call."""

    seed: int
    stream_id: int = 0
    counter: int = field(default=0, compare=False)

    def fork(self, stream_id):
        return RandomStream(self.seed, stream_id)


def _generator(seed, stream_id, counter):
    msg = struct.pack("<qqq", seed, stream_id, counter)
    key = int.from_bytes(hashlib.blake2b(msg, digest_size=16).digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))


def gaussian(stream, shape):
    """I.i.d. standard-normal grid; deterministic in (seed, stream_id, call index)."""
    shape = tuple(int(s) for s in (shape if hasattr(shape, "__len__") else (shape,)))
    if len(shape) == 0:
        raise ValueError("shape must be nonempty")
    g = _generator(stream.seed, stream.stream_id, stream.counter)
    stream.counter += 1
    return g.standard_normal(shape, dtype=np.float64)


def uniform(stream, shape, low=0.0, high=1.0):
    shape = tuple(int(s) for s in (shape if hasattr(shape, "__len__") else (shape,)))
    if len(shape) == 0:
        raise ValueError("shape must be nonempty")
    g = _generator(stream.seed, stream.stream_id, stream.counter)
    stream.counter += 1
    return g.uniform(low, high, size=shape)


def integers(stream, n, low, high):
    """n integers uniform on [low, high)."""
    g = _generator(stream.seed, stream.stream_id, stream.counter)
    stream.counter += 1
    return g.integers(low, high, size=int(n))


def permutation(stream, n):
    g = _generator(stream.seed, stream.stream_id, stream.counter)
    stream.counter += 1
    return g.permutation(int(n))


def gaussian_rows(streams, row_shape):
    """Stack one gaussian draw per stream: result shape (len(streams), *row_shape)."""
    return np.stack([gaussian(s, row_shape) for s in streams])

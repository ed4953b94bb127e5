"""Hierarchically seedable random streams and small array helpers.

A stream is identified by a master seed plus a path of integer labels.
Deriving a child appends a label, so every (seed, path) pair names one
reproducible generator. Streams are backed by numpy's ``SeedSequence``
spawn keys feeding a PCG64 bit generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class RngStream:
    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if any(int(label) < 0 for label in self.path):
            raise ValueError("stream labels must be non-negative")

    def derive(self, label: int) -> "RngStream":
        return RngStream(self.seed, self.path + (int(label),))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))

    def int_seed(self) -> int:
        """A 63-bit integer seed for APIs that take a plain int."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.path)
        hi, lo = ss.generate_state(2, np.uint32)
        return ((int(hi) << 32) | int(lo)) >> 1


RandomSource = Union[RngStream, np.random.Generator]


def derive(parent: RngStream, label: int) -> RngStream:
    return parent.derive(label)


def as_generator(source: RandomSource) -> np.random.Generator:
    if isinstance(source, RngStream):
        return source.generator()
    if isinstance(source, np.random.Generator):
        return source
    raise TypeError(f"expected RngStream or numpy Generator, got {type(source).__name__}")


def bernoulli(source: RandomSource, p: float, size=None):
    """Draw 0/1 values that are 1 with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    gen = as_generator(source)
    draws = gen.random(size) < p
    if size is None:
        return int(draws)
    return draws.astype(np.int8)


def gaussian(source: RandomSource, mu: float, sigma: float, size=None):
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    gen = as_generator(source)
    z = gen.standard_normal(size)
    # location-scale form keeps sigma=0 exact
    return mu + sigma * z


def sign_pm1(x) -> np.ndarray:
    """Elementwise sign onto {-1, +1} with sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def check_bits(a, name: str = "array") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all((a == 1.0) | (a == -1.0)):
        raise ValueError(f"{name} must contain only -1 and +1")
    return a

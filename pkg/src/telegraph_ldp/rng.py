from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

_U64 = 2**64


@dataclass(frozen=True)
class RngSeed:
    """A (seed, stream) key for a counter-based Philox substream."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not 0 <= int(value) < _U64:
                raise DomainError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def substream(self, offset: int) -> "RngSeed":
        return RngSeed(self.seed, (self.stream + offset) % _U64)


def generator(key: RngSeed) -> np.random.Generator:
    """Philox generator for ``key``; identical keys give identical draws."""
    seq = np.random.SeedSequence(int(key.seed), spawn_key=(int(key.stream),))
    return np.random.Generator(np.random.Philox(seq))

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def uniform_grid(n: int) -> np.ndarray:
    if n < 1:
        raise DomainError("grid needs n >= 1")
    return np.linspace(0.0, 1.0, n + 1)


@dataclass(frozen=True, eq=False)
class GridPath:
    """Real function sampled on the uniform grid ``t_i = i / n`` of ``[0, 1]``."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size < 2:
            raise DomainError("a grid path needs at least two nodes")
        if not np.all(np.isfinite(vals)):
            raise DomainError("grid path values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, f, n: int) -> "GridPath":
        grid = uniform_grid(n)
        return cls(np.array([f(t) for t in grid], dtype=float))

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def grid(self) -> np.ndarray:
        return uniform_grid(self.n)

    def __call__(self, t):
        """Piecewise-linear interpolant."""
        return np.interp(t, self.grid, self.values)

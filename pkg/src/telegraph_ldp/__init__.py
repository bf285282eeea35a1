"""Large deviations of telegraph-driven processes: samplers, rate functions and checks."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import CapacityError, DivergenceError, DomainError, NumericError, SolverError, TelegraphLdpError
from .grids import GridPath, uniform_grid
from .rng import RngSeed

__all__ = [
    "__version__",
    "CapacityError",
    "DivergenceError",
    "DomainError",
    "GridPath",
    "NumericError",
    "RngSeed",
    "SolverError",
    "TelegraphLdpError",
    "uniform_grid",
]

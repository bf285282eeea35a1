"""Exact sampling and piecewise integration of the scaled telegraph noise.

The noise is ``theta_eps(t) = (-1)**N(t / eps**2) / eps`` where ``N`` is a
unit-rate Poisson process.  A path is stored losslessly as its initial sign
and the ordered jump times in t-coordinates (intensity ``eps**-2``), so every
integral against it reduces to a finite sum over constant segments.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Literal

import numpy as np
from scipy import integrate

from .errors import CapacityError, DomainError, NumericError
from .rng import RngSeed, generator

Initial = Literal["plus", "minus", "stationary"]
Side = Literal["left", "right"]

MAX_EXPECTED_JUMPS = 1e8
TOL_QUAD = 1e-10


def _check_capacity(epsilon: float, horizon: float, rate: float | None = None) -> None:
    rate = epsilon**-2 if rate is None else rate
    if rate * horizon > MAX_EXPECTED_JUMPS:
        raise CapacityError(
            f"expected {rate * horizon:.3g} jumps exceeds the supported {MAX_EXPECTED_JUMPS:.0e}"
        )


@dataclass(frozen=True, eq=False)
class TelegraphPath:
    """One realisation of ``theta_eps`` on ``[0, horizon]``.

    The value on a jump instant is the post-jump value; left limits are
    available through ``theta_at(..., side="left")``.
    """

    epsilon: float
    horizon: float
    initial_sign: int
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if not self.epsilon > 0 or not self.horizon > 0:
            raise DomainError("epsilon and horizon must be positive")
        if self.initial_sign not in (1, -1):
            raise DomainError("initial_sign must be +1 or -1")
        jumps = np.array(self.jump_times, dtype=float).reshape(-1)
        if jumps.size:
            if jumps[0] <= 0 or jumps[-1] > self.horizon:
                raise DomainError("jump times must lie in (0, horizon]")
            if np.any(np.diff(jumps) <= 0):
                raise DomainError("jump times must be strictly increasing")
        jumps.setflags(write=False)
        object.__setattr__(self, "jump_times", jumps)

    def __eq__(self, other):
        if not isinstance(other, TelegraphPath):
            return NotImplemented
        return (
            self.epsilon == other.epsilon
            and self.horizon == other.horizon
            and self.initial_sign == other.initial_sign
            and np.array_equal(self.jump_times, other.jump_times)
        )

    __hash__ = None

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.size)

    @cached_property
    def breakpoints(self) -> np.ndarray:
        """Segment boundaries ``0 = b_0 < b_1 < ... <= b_m = horizon``."""
        pts = np.concatenate(([0.0], self.jump_times, [self.horizon]))
        pts.setflags(write=False)
        return pts

    @cached_property
    def segment_values(self) -> np.ndarray:
        """Value of theta on each segment ``[b_j, b_{j+1})``."""
        k = np.arange(self.n_jumps + 1)
        vals = self.initial_sign * np.where(k % 2 == 0, 1.0, -1.0) / self.epsilon
        vals.setflags(write=False)
        return vals

    @cached_property
    def _knot_integrals(self) -> np.ndarray:
        lengths = np.diff(self.breakpoints)
        out = np.concatenate(([0.0], np.cumsum(lengths * self.segment_values)))
        out.setflags(write=False)
        return out

    def segment_index(self, t: float, side: Side = "right") -> int:
        """Index of the segment holding ``t`` (pre-jump segment when side is left)."""
        where = "left" if side == "left" else "right"
        idx = int(np.searchsorted(self.jump_times, t, side=where))
        return idx

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("segment_index,start_t,end_t,theta_value\n")
        pts = self.breakpoints
        for j, value in enumerate(self.segment_values):
            buf.write(f"{j},{pts[j]:.17g},{pts[j + 1]:.17g},{value:.17g}\n")
        return buf.getvalue()


def sample_path(
    epsilon: float,
    horizon: float = 1.0,
    seed: RngSeed | None = None,
    initial: Initial = "plus",
) -> TelegraphPath:
    """Draw a telegraph path with Exponential(eps**-2) inter-arrival times.

    ``initial="plus"`` follows the convention N(0)=0; ``"stationary"`` draws
    the initial sign from a fair coin.
    """
    if not epsilon > 0 or not horizon > 0:
        raise DomainError("epsilon and horizon must be positive")
    _check_capacity(epsilon, horizon)
    gen = generator(seed or RngSeed(0))
    sign = _initial_signs(gen, 1, initial)[0]
    rate = epsilon**-2
    mean = rate * horizon
    block = int(mean + 6.0 * math.sqrt(mean) + 16)
    times: list[np.ndarray] = []
    last = 0.0
    while True:
        arrivals = last + np.cumsum(gen.standard_exponential(block) / rate)
        inside = arrivals[arrivals <= horizon]
        times.append(inside)
        if inside.size < block:
            break
        last = arrivals[-1]
    jumps = np.concatenate(times)
    # cumsum rounding can in principle produce a tie; a zero-length segment carries no mass
    if jumps.size > 1 and np.any(np.diff(jumps) <= 0):
        jumps = np.unique(jumps)
    return TelegraphPath(epsilon, horizon, int(sign), jumps)


def _initial_signs(gen: np.random.Generator, n: int, initial: Initial) -> np.ndarray:
    if initial == "plus":
        return np.ones(n, dtype=int)
    if initial == "minus":
        return -np.ones(n, dtype=int)
    if initial == "stationary":
        return 2 * gen.integers(0, 2, size=n) - 1
    raise DomainError(f"unknown initial law {initial!r}")


def _check_time(path: TelegraphPath, t: float) -> None:
    if not 0.0 <= t <= path.horizon:
        raise DomainError(f"t={t} outside [0, {path.horizon}]")


def theta_at(path: TelegraphPath, t: float, side: Side = "right") -> float:
    """Value of theta at ``t``; ``side="left"`` gives the pre-jump limit."""
    _check_time(path, t)
    if side not in ("left", "right"):
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")
    return float(path.segment_values[path.segment_index(t, side)])


def theta_integral(path: TelegraphPath, t):
    """``Theta_eps(t)``, exact; accepts scalars or arrays."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > path.horizon):
        raise DomainError("t outside [0, horizon]")
    idx = np.searchsorted(path.jump_times, t_arr, side="right")
    out = path._knot_integrals[idx] + path.segment_values[idx] * (t_arr - path.breakpoints[idx])
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Weight:
    """A weight function for ``integrate_theta``.

    Supply ``antiderivative`` for exact segment integrals; otherwise each
    segment is integrated by adaptive quadrature.  ``breakpoints`` lists
    interior points where ``func`` is non-smooth.
    """

    func: Callable[[float], float]
    antiderivative: Callable[[float], float] | None = None
    breakpoints: tuple[float, ...] = ()

    @classmethod
    def constant(cls, c: float = 1.0) -> "Weight":
        return cls(lambda r: c, lambda r: c * r)


def integrate_theta(
    path: TelegraphPath,
    weight: Weight,
    a: float,
    b: float,
    tol_quad: float = TOL_QUAD,
) -> float:
    """``int_a^b weight(r) theta_eps(r) dr`` summed over constant segments."""
    if not 0.0 <= a <= b <= path.horizon:
        raise DomainError(f"need 0 <= a <= b <= horizon, got a={a}, b={b}")
    if a == b:
        return 0.0
    lo = path.segment_index(a, "right")
    hi = path.segment_index(b, "left")
    edges = np.concatenate(([a], path.jump_times[lo:hi], [b]))
    signs = path.segment_values[lo : hi + 1]
    if weight.antiderivative is not None:
        F = np.array([weight.antiderivative(x) for x in edges], dtype=float)
        return float(np.dot(signs, np.diff(F)))
    total = 0.0
    for value, x0, x1 in zip(signs, edges[:-1], edges[1:]):
        if x1 <= x0:
            continue
        total += value * _quad_segment(weight, x0, x1, tol_quad)
    return total


def _quad_segment(weight: Weight, x0: float, x1: float, tol: float) -> float:
    pts = [p for p in weight.breakpoints if x0 < p < x1]
    res = integrate.quad(
        weight.func, x0, x1, epsabs=tol, epsrel=0.0, limit=200, points=pts or None,
        full_output=1,
    )
    val, err = res[0], res[1]
    # a fourth element is only present when QUADPACK reports a failure
    if len(res) > 3 and err > tol:
        raise NumericError(f"quadrature on [{x0}, {x1}] missed tolerance {tol}", err)
    return float(val)


def compensated_jump_integral(path: TelegraphPath, t: float) -> float:
    """``int_0^t theta(s-) dN~(s)``: jump sum minus ``eps**-2 int_0^t theta``."""
    _check_time(path, t)
    n = path.segment_index(t, "right")
    # theta just before jump j is the value of segment j-1
    jump_sum = float(np.sum(path.segment_values[:n]))
    edges = np.minimum(path.breakpoints[: n + 2], t)
    lengths = np.diff(edges)[: n + 1]
    compensator = float(np.dot(path.segment_values[: n + 1], lengths)) / path.epsilon**2
    return jump_sum - compensator


def decomposition_residual(path: TelegraphPath, t: float) -> float:
    """Pathwise residual of the Ito decomposition of ``Theta_eps(t)``.

    Returns ``Theta(t) - [eps**2 theta(0)/2 - eps**2 M(t) - eps**2 theta(t)/2]``
    with ``M`` the compensated jump integral.  With the N(0)=0 convention
    ``eps**2 theta(0)/2 = eps/2``.
    """
    eps2 = path.epsilon**2
    lhs = theta_integral(path, t)
    rhs = (
        0.5 * eps2 * path.segment_values[0]
        - eps2 * compensated_jump_integral(path, t)
        - 0.5 * eps2 * theta_at(path, t, "right")
    )
    return float(lhs - rhs)


# ---------------------------------------------------------------------------
# batches of paths for Monte Carlo


@dataclass(frozen=True, eq=False)
class TelegraphBatch:
    """``n`` independent paths with jump times padded by ``inf``.

    ``rate_plus``/``rate_minus`` are the flip intensities out of the +1/-1
    states; both equal ``eps**-2`` for the nominal dynamics.
    """

    epsilon: float
    horizon: float
    initial: np.ndarray
    jumps: np.ndarray
    rate_plus: float
    rate_minus: float

    @property
    def n(self) -> int:
        return int(self.initial.size)

    @cached_property
    def _segments(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.jumps.shape[1]
        parity = np.where(np.arange(m + 1) % 2 == 0, 1, -1)
        signs = self.initial[:, None] * parity[None, :]
        edges = np.concatenate(
            (np.zeros((self.n, 1)), np.minimum(self.jumps, self.horizon), np.full((self.n, 1), self.horizon)),
            axis=1,
        )
        return signs, edges

    def path(self, i: int) -> TelegraphPath:
        row = self.jumps[i]
        return TelegraphPath(self.epsilon, self.horizon, int(self.initial[i]), row[np.isfinite(row)])

    def scaled_integral(self, t: float) -> np.ndarray:
        """``eps * Theta_eps(t)`` for every path."""
        if not 0.0 <= t <= self.horizon:
            raise DomainError("t outside [0, horizon]")
        signs, edges = self._segments
        lengths = np.diff(np.minimum(edges, t), axis=1)
        return np.sum(signs * lengths, axis=1)

    def scaled_integral_grid(self, grid: np.ndarray) -> np.ndarray:
        """``eps * Theta_eps`` at every node of ``grid``; shape ``(n, len(grid))``."""
        return np.stack([self.scaled_integral(float(t)) for t in grid], axis=1)

    def occupation(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Time in +1, time in -1, jumps out of +1, jumps out of -1 on ``[0, horizon]``."""
        signs, edges = self._segments
        lengths = np.diff(edges, axis=1)
        t_plus = np.sum(np.where(signs > 0, lengths, 0.0), axis=1)
        t_minus = np.sum(np.where(signs < 0, lengths, 0.0), axis=1)
        real = np.isfinite(self.jumps) & (self.jumps <= self.horizon)
        pre = signs[:, :-1]
        j_plus = np.sum(real & (pre > 0), axis=1)
        j_minus = np.sum(real & (pre < 0), axis=1)
        return t_plus, t_minus, j_plus, j_minus

    def log_likelihood_ratio(self) -> np.ndarray:
        """``log dP/dQ`` of nominal (rate ``eps**-2``) against the sampling rates."""
        alpha = self.epsilon**-2
        if self.rate_plus == alpha and self.rate_minus == alpha:
            return np.zeros(self.n)
        t_plus, t_minus, j_plus, j_minus = self.occupation()
        return (
            (self.rate_plus - alpha) * t_plus
            + (self.rate_minus - alpha) * t_minus
            + j_plus * math.log(alpha / self.rate_plus)
            + j_minus * math.log(alpha / self.rate_minus)
        )


def sample_batch(
    epsilon: float,
    horizon: float,
    n: int,
    seed: RngSeed,
    initial: Initial = "plus",
    rates: tuple[float, float] | None = None,
) -> TelegraphBatch:
    """Sample ``n`` paths, optionally with state-dependent flip rates."""
    if not epsilon > 0 or not horizon > 0:
        raise DomainError("epsilon and horizon must be positive")
    alpha = epsilon**-2
    rate_plus, rate_minus = (alpha, alpha) if rates is None else map(float, rates)
    if not rate_plus > 0 or not rate_minus > 0:
        raise DomainError("flip rates must be positive")
    top = max(rate_plus, rate_minus)
    _check_capacity(epsilon, horizon, top)
    gen = generator(seed)
    init = _initial_signs(gen, n, initial)
    mean = top * horizon
    block = int(mean + 6.0 * math.sqrt(mean) + 16)
    columns: list[np.ndarray] = []
    last = np.zeros(n)
    active = np.arange(n)
    while active.size:
        j0 = sum(c.shape[1] for c in columns)
        parity = np.where((j0 + np.arange(block)) % 2 == 0, 1, -1)
        state = init[active, None] * parity[None, :]
        rate = np.where(state > 0, rate_plus, rate_minus)
        steps = gen.standard_exponential((active.size, block)) / rate
        arrivals = last[active, None] + np.cumsum(steps, axis=1)
        col = np.full((n, block), np.inf)
        col[active] = arrivals
        columns.append(col)
        last[active] = arrivals[:, -1]
        active = active[arrivals[:, -1] <= horizon]
    jumps = np.concatenate(columns, axis=1)
    jumps[jumps > horizon] = np.inf
    width = int(np.max(np.sum(np.isfinite(jumps), axis=1), initial=0))
    jumps = np.ascontiguousarray(jumps[:, :width])
    return TelegraphBatch(epsilon, horizon, init, jumps, rate_plus, rate_minus)

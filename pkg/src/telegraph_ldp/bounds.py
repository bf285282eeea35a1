"""Concentration inequalities for compensated Poisson integrals, checked by simulation.

All bounds are evaluated in log-space: exponents carry a factor
``lambda**-2`` that overflows doubles well before the bound itself becomes
uninformative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Literal, Sequence

import numpy as np
from scipy import optimize, stats

from .errors import DomainError
from .grids import GridPath
from .rates import INF
from .rng import RngSeed, generator
from .telegraph import TelegraphBatch, sample_batch

SQRT2 = math.sqrt(2.0)
NEAR = 1e-9


@dataclass(frozen=True)
class BoundParams:
    rho: float = 1.0
    B: float = 0.0
    M: float = 0.0
    eta: float = 1.0
    a: float = 1.0
    iota1: float = 0.0
    iota2: float = 1.0
    epsilon: float = 0.1
    lam: float = 0.1
    y0_hat: float = 0.0
    y0_check: float = 0.0

    def __post_init__(self):
        if self.rho < 0:
            raise DomainError("rho must be nonnegative")
        if self.iota1 > self.iota2:
            raise DomainError("need iota1 <= iota2")
        if not self.lam > 0 or self.epsilon < 0:
            raise DomainError("need lambda > 0 and epsilon >= 0")

    def with_eta(self, eta: float) -> "BoundParams":
        return replace(self, eta=float(eta))


# ---------------------------------------------------------------------------
# exponential inequality


def _exponent(p: BoundParams, eta: float) -> float:
    """``eta a - eta**2 rho**2 (iota2 - iota1) exp(eps eta rho / lambda) / 2``."""
    width = p.iota2 - p.iota1
    growth = p.epsilon / p.lam * eta * p.rho
    quad = 0.5 * eta * eta * p.rho**2 * width
    if quad == 0.0:
        return eta * p.a
    if growth > 700.0:
        return -INF
    return eta * p.a - quad * math.exp(growth)


def log_exponential_inequality_bound(p: BoundParams, eta: float | None = None) -> float:
    """Log of the bound at ``eta`` (default ``p.eta``), clamped to at most 0."""
    eta = p.eta if eta is None else eta
    if eta <= 0:
        return 0.0
    return min(0.0, -_exponent(p, eta) / p.lam**2)


def exponential_inequality_bound(p: BoundParams) -> float:
    """``P(sup_t lambda eps int gamma dN~ > a)`` bound at the given ``eta``, in ``[0, 1]``."""
    return math.exp(log_exponential_inequality_bound(p))


def optimal_eta(p: BoundParams) -> tuple[float, float]:
    """``(eta*, log bound)`` minimising the bound over ``eta > 0``.

    The exponent is concave in ``eta`` with derivative
    ``a - c eta exp(g eta) (1 + g eta / 2)``, ``c = rho**2 width``, ``g = eps rho / lambda``.
    That derivative falls strictly from ``a`` and is negative at ``2a / c``, so the
    maximiser is its unique root on that bracket.
    """
    width = p.iota2 - p.iota1
    if p.a <= 0:
        return 0.0, 0.0
    c = p.rho**2 * width
    if c == 0:
        return INF, -INF
    g = p.epsilon * p.rho / p.lam

    def slope(eta: float) -> float:
        return p.a - c * eta * math.exp(min(g * eta, 700.0)) * (1.0 + 0.5 * g * eta)

    eta = optimize.brentq(slope, 0.0, 2.0 * p.a / c, xtol=1e-14, rtol=1e-15)
    return eta, min(0.0, -_exponent(p, eta) / p.lam**2)


def optimized_exponential_bound(p: BoundParams) -> float:
    return math.exp(optimal_eta(p)[1])


# ---------------------------------------------------------------------------
# comparison bound


def smallness_margin(p: BoundParams) -> float:
    """``1 - eps lambda M - 1/sqrt(2)``; must be positive."""
    return 1.0 - p.epsilon * p.lam * p.M - 1.0 / SQRT2


def comparison_bound(p: BoundParams, delta: float) -> float:
    """Upper bound on ``lambda**2 log P(sup |U| > delta)`` for the comparison process."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    if smallness_margin(p) <= 0:
        raise DomainError("smallness condition 1 - eps*lambda*M > 1/sqrt(2) is violated")
    eps, lam, M = p.epsilon, p.lam, p.M
    growth = 4.0 * M * eps / lam
    middle = 4.0 * M * M * eps * eps * (2.0 + 3.0 * lam * lam) * math.exp(growth) if M else 0.0
    num = p.rho**2 + p.y0_hat**2 + p.y0_check**2
    den = p.rho**2 + delta**2
    if num == 0:
        return -INF
    return 2.0 * SQRT2 * p.B + middle + math.log(num) - math.log(den)


def lemma_instantiation(theta: float, epsilon: float, lam: float, x0: float, K: float) -> float:
    """The same bound written out for ``B = M = sqrt(2) theta``, ``rho = 1``, ``y0 = x0``."""
    return (
        4.0 * theta
        + 8.0 * theta**2 * epsilon**2 * (2.0 + 3.0 * lam**2) * math.exp(4.0 * SQRT2 * theta * epsilon / lam)
        + math.log((1.0 + 2.0 * x0**2) / (1.0 + K**2))
    )


# ---------------------------------------------------------------------------
# elementary inequality

Verdict = Literal["holds", "violated", "precondition_not_met"]


def _exact_verdict(a: float, b: float, rho: float, s: float) -> Verdict:
    """Exact rational check with ``beta`` taken as ``s**2`` for the float ``s = sqrt(beta)``."""
    a, b, rho, s = Fraction(a), Fraction(b), Fraction(rho), Fraction(s)
    base = rho * rho + a * a
    if b * b > s * s * base:
        return "precondition_not_met"
    return "holds" if base * (1 - s) ** 2 <= rho * rho + (a + b) ** 2 else "violated"


def elementary_inequality_check(a: float, b: float, rho: float, beta: float) -> Verdict:
    """``rho**2 + a**2 <= (rho**2 + (a + b)**2) / (1 - sqrt(beta))**2`` given ``b**2 <= beta (rho**2 + a**2)``.

    Near-equality cases are settled in exact rational arithmetic, so rounding
    can neither fake nor hide a violation.
    """
    if rho < 0 or not 0.0 < beta < 1.0:
        raise DomainError("need rho >= 0 and beta in (0, 1)")
    s = math.sqrt(beta)
    base = rho * rho + a * a
    rhs = (rho * rho + (a + b) ** 2) / (1.0 - s) ** 2
    if b * b < beta * base * (1.0 - NEAR) and base < rhs * (1.0 - NEAR):
        return "holds"
    return _exact_verdict(a, b, rho, s)


@dataclass
class FuzzReport:
    cases: int
    violations: int
    max_ratio: float
    worst: tuple
    exact_rechecks: int

    def to_dict(self) -> dict:
        return {"cases": self.cases, "violations": self.violations, "max_ratio": self.max_ratio,
                "worst": list(self.worst), "exact_rechecks": self.exact_rechecks}


def elementary_inequality_fuzz(n: int, seed: RngSeed) -> FuzzReport:
    """Vectorised fuzzing over ``n`` random tuples, nearly all precondition-satisfying.

    Magnitudes are drawn log-uniformly over many decades and ``b`` is placed
    anywhere in its admissible interval, including the endpoints.
    """
    if n < 1:
        raise DomainError("need at least one case")
    gen = generator(seed)
    a = np.where(gen.random(n) < 0.5, -1.0, 1.0) * 10.0 ** gen.uniform(-6, 6, n)
    a[gen.random(n) < 0.02] = 0.0
    rho = 10.0 ** gen.uniform(-6, 6, n)
    rho[gen.random(n) < 0.02] = 0.0
    beta = gen.uniform(0.0, 1.0, n)
    beta = np.clip(beta, 1e-12, 1.0 - 1e-12)
    base = rho * rho + a * a
    reach = np.sqrt(beta * base)
    u = gen.uniform(-1.0, 1.0, n)
    # a share of cases sit on the tight end b = -sqrt(beta (rho**2 + a**2)) sign(a),
    # pulled in by a few ulps so rounding does not push them outside the precondition
    edge = -np.sign(np.where(a == 0, 1.0, a)) * (1.0 - 2.0**-45)
    u = np.where(gen.random(n) < 0.05, edge, u)
    b = u * reach
    s = np.sqrt(beta)
    rhs = (rho * rho + (a + b) ** 2) / (1.0 - s) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, base / rhs, np.where(base > 0, INF, 0.0))
    pre = b * b <= beta * base
    # anything close to either boundary is re-decided exactly
    near = (b * b >= beta * base * (1.0 - NEAR)) | (ratio >= 1.0 - NEAR)
    cases = int(np.count_nonzero(pre & ~near))
    violations = 0
    for i in np.flatnonzero(near):
        verdict = _exact_verdict(float(a[i]), float(b[i]), float(rho[i]), float(s[i]))
        cases += verdict != "precondition_not_met"
        violations += verdict == "violated"
    ratio_ok = np.where(pre, ratio, 0.0)
    k = int(np.argmax(ratio_ok))
    worst = (float(a[k]), float(b[k]), float(rho[k]), float(beta[k]))
    return FuzzReport(cases, violations, float(ratio_ok[k]), worst, int(np.count_nonzero(near)))


# ---------------------------------------------------------------------------
# exponential moment of weighted telegraph integrals


def _pl_antiderivative(f: GridPath, x: np.ndarray) -> np.ndarray:
    """``int_0^x f`` for the piecewise-linear interpolant of ``f``."""
    g, v = f.grid, f.values
    cum = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(g) * (v[1:] + v[:-1]))))
    idx = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
    h = x - g[idx]
    slope = (v[idx + 1] - v[idx]) / (g[idx + 1] - g[idx])
    return cum[idx] + v[idx] * h + 0.5 * slope * h * h


def weighted_theta_integrals(f: GridPath, batch: TelegraphBatch) -> np.ndarray:
    """``int_0^1 f(r) theta_eps(r) dr`` for each path, exact for piecewise-linear ``f``."""
    signs, edges = batch._segments
    F = _pl_antiderivative(f, edges.ravel()).reshape(edges.shape)
    return np.sum(signs * np.diff(F, axis=1), axis=1) / batch.epsilon


@dataclass
class MomentEstimate:
    epsilon: float
    eta: float
    n: int
    mean: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return dict(vars(self))


def exp_moment_statistic(
    f: GridPath, eta: float, epsilon: float, n: int, seed: RngSeed, initial: str = "stationary"
) -> MomentEstimate:
    """Sample mean of ``exp(eta (int f theta)**2 / int f**2)`` with a 95% normal CI."""
    if not 0.0 <= eta < 0.5:
        raise DomainError("eta must lie in [0, 1/2)")
    norm2 = float(np.sum(np.diff(f.grid) * (f.values[:-1] ** 2 + f.values[:-1] * f.values[1:] + f.values[1:] ** 2) / 3.0))
    if not norm2 > 0:
        raise DomainError("weight must have positive L2 norm")
    if eta == 0.0:
        return MomentEstimate(epsilon, eta, n, 1.0, 1.0, 1.0)
    batch = sample_batch(epsilon, 1.0, n, seed, initial)
    z = weighted_theta_integrals(f, batch)
    x = np.exp(eta * z * z / norm2)
    mean = float(np.mean(x))
    half = float(stats.norm.ppf(0.975) * np.std(x, ddof=1) / math.sqrt(n))
    return MomentEstimate(epsilon, eta, n, mean, mean - half, mean + half)


def gaussian_envelope(eta: float) -> float:
    """``E exp(eta Z**2) = 1 / sqrt(1 - 2 eta)`` for standard normal ``Z``."""
    return 1.0 / math.sqrt(1.0 - 2.0 * eta)


# ---------------------------------------------------------------------------
# martingale sup events


def martingale_sup(batch: TelegraphBatch, lam: float, rho: float, two_sided: bool = False) -> np.ndarray:
    """``sup_t lambda eps int_0^t rho xi(s-) dN~(s)`` per path (or of its absolute value).

    The integral equals ``lambda eps rho (S(t) - eps**-1 int_0^t xi(s/eps**2) ds)``
    with ``S`` the sum of pre-jump signs; it is linear between jumps, so the sup
    is attained at a left or right limit at a jump time or at the horizon.
    """
    eps = batch.epsilon
    signs, edges = batch._segments
    real = np.isfinite(batch.jumps)
    pre = np.where(real, signs[:, :-1], 0)
    S = np.concatenate((np.zeros((batch.n, 1)), np.cumsum(pre, axis=1)), axis=1)
    E = np.concatenate((np.zeros((batch.n, 1)), np.cumsum(signs * np.diff(edges, axis=1), axis=1)), axis=1)
    scale = lam * eps * rho
    start = scale * (S - E[:, :-1] / eps**2)
    end = scale * (S - E[:, 1:] / eps**2)
    valid = np.concatenate((np.ones((batch.n, 1), dtype=bool), real), axis=1)
    if two_sided:
        start, end = np.abs(start), np.abs(end)
    vals = np.where(valid, np.maximum(start, end), -INF)
    return np.max(vals, axis=1)


@dataclass
class VerifyCell:
    epsilon: float
    a: float
    lam: float
    n: int
    hits: int
    frequency: float
    ci_low: float
    ci_high: float
    bound: float
    eta: float
    two_sided: bool
    passed: bool

    def to_dict(self) -> dict:
        return dict(vars(self))


def verify_exponential_inequality(
    epsilons: Sequence[float] = (0.5, 0.35, 0.25),
    levels: Sequence[float] = (0.25, 0.5, 1.0),
    n: int = 100_000,
    seed: RngSeed = RngSeed(0),
    rho: float = 1.0,
    kappa: float = 1.0,
    two_sided: bool = True,
    confidence: float = 0.99,
) -> list[VerifyCell]:
    """Empirical sup frequencies against the eta-optimised bound, with ``lambda = kappa eps``.

    The two-sided event is compared with twice the one-sided bound (applied to
    ``gamma`` and ``-gamma``).  A cell fails only if the lower end of the exact
    binomial CI exceeds the bound.
    """
    cells = []
    for i, eps in enumerate(epsilons):
        lam = kappa * eps
        batch = sample_batch(eps, 1.0, n, seed.substream(i), "plus")
        sup = martingale_sup(batch, lam, rho, two_sided)
        for a in levels:
            p = BoundParams(rho=rho, a=a, iota1=0.0, iota2=1.0, epsilon=eps, lam=lam)
            eta, log_b = optimal_eta(p)
            bound = min(1.0, (2.0 if two_sided else 1.0) * math.exp(log_b))
            hits = int(np.count_nonzero(sup > a))
            ci = stats.binomtest(hits, n).proportion_ci(confidence_level=confidence, method="exact")
            cells.append(VerifyCell(eps, a, lam, n, hits, hits / n, float(ci.low), float(ci.high),
                                    bound, eta, two_sided, float(ci.low) <= bound))
    return cells

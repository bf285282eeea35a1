"""Closed-form rate functions of the telegraph occupation and their oracles.

``lambda_star`` is the local cost ``1 - sqrt(1 - x**2)`` on ``[-1, 1]`` and
``+inf`` outside; ``lambda_cgf`` is its convex conjugate ``sqrt(1 + a**2) - 1``.
``finite_eps_cgf`` is the exact scaled cumulant generating function of the
occupation integral at finite horizon, computed from the 2x2 tilted generator.

Infinite rates are returned as IEEE ``math.inf`` and never arise from
overflow; comparisons treat them as absorbing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy import optimize

from .errors import DomainError

INF = math.inf

Regime = Literal["kappa", "gaussian", "unit_path"]


def lambda_star(x: float) -> float:
    """``1 - sqrt(1 - x**2)`` for ``|x| <= 1``, ``inf`` otherwise."""
    ax = abs(x)
    if ax > 1.0 or math.isnan(ax):
        return INF if not math.isnan(ax) else math.nan
    if ax == 1.0:
        return 1.0
    # x**2 / (1 + sqrt(1 - x**2)) avoids cancellation near 0
    return x * x / (1.0 + math.sqrt(1.0 - x * x))


def lambda_star_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, INF)
    ok = np.abs(x) <= 1.0
    xx = x[ok] ** 2
    out[ok] = xx / (1.0 + np.sqrt(1.0 - xx))
    return out


def _argmax(f, lo: float, hi: float, xtol: float = 1e-12) -> tuple[float, float]:
    res = optimize.minimize_scalar(
        lambda z: -f(z), bounds=(lo, hi), method="bounded", options={"xatol": xtol, "maxiter": 500}
    )
    # the bounded search never evaluates the endpoints themselves
    best = max(((res.x, -res.fun), (lo, f(lo)), (hi, f(hi))), key=lambda p: p[1])
    return best


def lambda_cgf(alpha: float, mode: Literal["closed_form", "legendre_numeric"] = "closed_form") -> float:
    """Limit cumulant generating function ``sup_x {alpha x - lambda_star(x)}``."""
    if mode == "closed_form":
        a2 = alpha * alpha
        return a2 / (math.sqrt(1.0 + a2) + 1.0)
    if mode == "legendre_numeric":
        return _argmax(lambda x: alpha * x - lambda_star(x), -1.0, 1.0)[1]
    raise DomainError(f"unknown mode {mode!r}")


def legendre_of_cgf(x: float, alpha_bound: float = 50.0) -> float:
    """Numeric ``sup_alpha {alpha x - lambda_cgf(alpha)}`` over ``[-alpha_bound, alpha_bound]``."""
    return _argmax(lambda a: a * x - lambda_cgf(a), -alpha_bound, alpha_bound)[1]


def finite_eps_cgf(alpha: float, T: float, initial: Literal["plus", "stationary"] = "stationary") -> float:
    """``(1/T) log E exp(alpha int_0^T xi(s) ds)`` for the unit-rate two-state chain.

    Uses the eigen-decomposition of ``Q + alpha diag(1, -1)`` with
    ``Q = [[-1, 1], [1, -1]]``.
    """
    if not T > 0:
        raise DomainError("T must be positive")
    if initial == "plus":
        p_plus, p_minus = 1.0, 0.0
    elif initial == "stationary":
        p_plus, p_minus = 0.5, 0.5
        # even in alpha (relabel the states); folding makes the symmetry exact in floating point
        alpha = abs(alpha)
    else:
        raise DomainError(f"unknown initial law {initial!r}")
    d = math.hypot(1.0, alpha)
    coeffs = []
    for s in (1.0, -1.0):
        w = s * d - alpha  # eigenvector (1, w) for eigenvalue -1 + s d
        coeffs.append((p_plus + p_minus * w) * (1.0 + w) / (1.0 + w * w))
    c_top, c_low = coeffs
    top = -1.0 + d
    return top + math.log(c_top + c_low * math.exp(-2.0 * d * T)) / T


def chernoff_log_bound(x: float, T: float, initial: Literal["plus", "stationary"] = "stationary") -> float:
    """Upper bound on ``(1/T) log P(int_0^T xi >= x T)`` from the exact finite-T CGF."""
    if x <= 0:
        return 0.0
    if x > 1:
        return -INF
    # maximiser of alpha x - Lambda_T(alpha) lies in alpha >= 0; bracket from the T = inf solution
    a_hi = 4.0 * (x / math.sqrt(max(1.0 - x * x, 1e-300)) + 1.0)
    a_hi = min(a_hi, 1e6)
    best = _argmax(lambda a: a * x - finite_eps_cgf(a, T, initial), 0.0, a_hi)[1]
    return -best


def occupation_rate(nu_plus: float) -> float:
    """Donsker-Varadhan rate ``(sqrt(nu(+1)) - sqrt(nu(-1)))**2`` of the two-state chain."""
    if not 0.0 <= nu_plus <= 1.0:
        raise DomainError("nu_plus must lie in [0, 1]")
    return (math.sqrt(nu_plus) - math.sqrt(1.0 - nu_plus)) ** 2


def contracted_occupation_rate(x: float) -> float:
    """``inf {L(nu) : nu(+1) - nu(-1) = x}`` over probability measures on {-1, +1}."""
    if abs(x) > 1.0:
        return INF
    # mass constraint plus mean constraint pin nu down to a single point
    return occupation_rate(min(1.0, max(0.0, 0.5 * (1.0 + x))))


@dataclass(frozen=True)
class RateModel:
    """Local cost of a rate regime.

    ``kappa``: ``lambda_star(x / kappa)``; ``gaussian``: ``x**2 / 2``;
    ``unit_path``: ``lambda_star``.
    """

    regime: Regime
    kappa: float | None = None

    def __post_init__(self):
        if self.regime == "kappa":
            if self.kappa is None or not self.kappa > 0:
                raise DomainError("kappa regime needs kappa > 0")
        elif self.regime not in ("gaussian", "unit_path"):
            raise DomainError(f"unknown regime {self.regime!r}")

    @classmethod
    def kappa_regime(cls, kappa: float) -> "RateModel":
        return cls("kappa", float(kappa))

    @classmethod
    def gaussian(cls) -> "RateModel":
        return cls("gaussian")

    @classmethod
    def unit_path(cls) -> "RateModel":
        return cls("unit_path")

    def cost(self, x: float) -> float:
        return gamma_cost(self, x)

    def cost_array(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.regime == "gaussian":
            return 0.5 * x * x
        if self.regime == "kappa":
            return lambda_star_array(x / self.kappa)
        return lambda_star_array(x)

    @property
    def bound(self) -> float:
        """Largest ``|x|`` with finite cost."""
        return {"kappa": self.kappa, "unit_path": 1.0}.get(self.regime, INF)

    def to_dict(self) -> dict:
        return {"regime": self.regime, "kappa": self.kappa}


def gamma_cost(model: RateModel, x: float) -> float:
    if model.regime == "gaussian":
        return 0.5 * x * x
    if model.regime == "kappa":
        return lambda_star(x / model.kappa)
    return lambda_star(x)


def finite_dim_rate(times: Sequence[float], values: Sequence[float], model: RateModel) -> float:
    """``sum_i (t_i - t_{i-1}) cost((x_i - x_{i-1}) / (t_i - t_{i-1}))`` with ``t_0 = x_0 = 0``."""
    t = np.concatenate(([0.0], np.asarray(times, dtype=float)))
    x = np.concatenate(([0.0], np.asarray(values, dtype=float)))
    if t.size != x.size or t.size < 2:
        raise DomainError("times and values must be equal-length and non-empty")
    dt = np.diff(t)
    if np.any(dt <= 0) or t[-1] > 1.0:
        raise DomainError("times must be strictly increasing in (0, 1]")
    total = 0.0
    for h, dx in zip(dt, np.diff(x)):
        c = gamma_cost(model, dx / h)
        if c == INF:
            return INF
        total += h * c
    return total

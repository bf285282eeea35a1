"""Discrete evaluation of the variational rate functionals.

* ``path_rate``: rate of ``eps * Theta_eps`` for a piecewise-linear path.
* ``kernel_rate``: ``inf {int lambda_star(phi) : f = int K(., r) phi(r) dr}``
  over piecewise-constant controls, by an augmented-Lagrangian method with a
  log-barrier keeping ``|phi| < 1``.
* ``sde_rate``: Freidlin-Wentzell action of a scalar controlled ODE path.

Infeasible problems return ``math.inf``; that is a result, not an error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import DomainError, SolverError
from .grids import GridPath, uniform_grid
from .kernels import KernelSpec, cell_integral
from .rates import INF, RateModel, gamma_cost, lambda_star, lambda_star_array

TOL_FEAS = 1e-6
DELTA_BAR = 1e-9
TOL_SIGMA = 1e-12


def path_rate(f: GridPath) -> float:
    """``sum_i dt lambda_star(slope_i)`` for the piecewise-linear interpolant of ``f``."""
    if f.values[0] != 0.0:
        raise DomainError("path_rate needs f(0) = 0")
    dt = np.diff(f.grid)
    slopes = np.diff(f.values) / dt
    costs = lambda_star_array(slopes)
    if np.any(np.isinf(costs)):
        return INF
    return float(np.dot(dt, costs))


# ---------------------------------------------------------------------------
# kernel-constrained rate


def forward_matrix(spec: KernelSpec, n_target: int, n_control: int) -> np.ndarray:
    """``A[i, j] = int_{cell j} K(t_i, r) dr`` for target nodes ``t_1..t_n``."""
    nodes = uniform_grid(n_target)[1:]
    cells = uniform_grid(n_control)
    A = np.zeros((nodes.size, n_control))
    for i, t in enumerate(nodes):
        for j in range(n_control):
            a, b = cells[j], cells[j + 1]
            if spec.family != "tabulated" and a >= t:
                break
            A[i, j] = cell_integral(spec, float(t), float(a), float(b))
    return A


@dataclass
class ActionResult:
    value: float
    control: np.ndarray
    feasibility_residual: float
    iterations: int
    objective_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "control_values": [float(x) for x in self.control],
            "feasibility_residual": self.feasibility_residual,
            "iterations": self.iterations,
        }


def min_feasibility(A: np.ndarray, f: np.ndarray) -> tuple[float, np.ndarray]:
    """``min ||A phi - f||_inf`` over ``|phi_j| <= 1``, as a linear program."""
    m, n = A.shape
    # variables (phi, s); minimise s subject to -s <= A phi - f <= s
    c = np.zeros(n + 1)
    c[-1] = 1.0
    ones = np.ones((m, 1))
    A_ub = np.block([[A, -ones], [-A, -ones]])
    b_ub = np.concatenate((f, -f))
    bounds = [(-1.0, 1.0)] * n + [(0.0, None)]
    res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise SolverError(f"feasibility LP failed: {res.message}")
    return float(res.x[-1]), res.x[:-1]


def _solve_barrier_al(
    A: np.ndarray,
    f: np.ndarray,
    h: float,
    tol_feas: float,
    delta_bar: float,
    mu0: float,
    outer: int,
    max_newton: int,
) -> ActionResult:
    n = A.shape[1]
    cap = 1.0 - delta_bar
    cap2 = cap * cap
    AtA = A.T @ A
    scale = max(float(np.max(np.abs(AtA))), 1e-300)
    rho = 10.0 * h / scale
    y = np.zeros(A.shape[0])
    phi = np.zeros(n)
    mu = mu0
    iterations = 0
    history = []

    def merit(p):
        if np.any(np.abs(p) >= cap):
            return INF
        r = A @ p - f
        return (
            h * float(np.sum(lambda_star_array(p)))
            - mu * float(np.sum(np.log(cap2 - p * p)))
            + float(y @ r)
            + 0.5 * rho * float(r @ r)
        )

    best = (INF, INF)
    prev_res = INF
    for _ in range(outer):
        for _ in range(max_newton):
            iterations += 1
            s = np.sqrt(1.0 - phi * phi)
            gap = cap2 - phi * phi
            r = A @ phi - f
            grad = h * phi / s + 2.0 * mu * phi / gap + A.T @ (y + rho * r)
            diag = h / s**3 + 2.0 * mu * (cap2 + phi * phi) / gap**2
            hess = rho * AtA
            hess[np.diag_indices(n)] += diag
            try:
                step = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = -grad / diag
            decrement = -float(grad @ step)
            if decrement < 1e-22:
                break
            # stay strictly inside the box, then backtrack on the merit function
            t = 1.0
            moving = step != 0
            if np.any(moving):
                lim = np.where(step > 0, (cap - phi) / np.where(moving, step, 1), (-cap - phi) / np.where(moving, step, 1))
                lim = lim[moving]
                t = min(1.0, 0.99 * float(np.min(lim))) if lim.size else 1.0
            m0 = merit(phi)
            while t > 1e-14 and merit(phi + t * step) > m0 - 1e-4 * t * decrement:
                t *= 0.5
            phi = phi + t * step
            if t * np.max(np.abs(step)) < 1e-15:
                break
        r = A @ phi - f
        res = float(np.max(np.abs(r))) if r.size else 0.0
        obj = h * float(np.sum(lambda_star_array(phi)))
        history.append((res, obj))
        if res < best[0]:
            best = (res, obj)
        y = y + rho * r
        if res > 0.25 * prev_res:
            rho *= 10.0
        prev_res = res
        mu *= 0.5
    r = A @ phi - f
    res = float(np.max(np.abs(r))) if r.size else 0.0
    value = h * float(np.sum(lambda_star_array(phi)))
    if res > tol_feas:
        raise SolverError(
            f"augmented Lagrangian stalled at feasibility {res:.3g} > {tol_feas:.1g}", best
        )
    return ActionResult(value, phi, res, iterations, history)


def kernel_rate(
    spec: KernelSpec,
    f: GridPath,
    n_control: int | None = None,
    tol_feas: float = TOL_FEAS,
    delta_bar: float = DELTA_BAR,
    mu0: float = 1e-2,
    outer: int = 30,
    max_newton: int = 50,
    A: np.ndarray | None = None,
) -> ActionResult:
    """Discrete ``I(f)`` with piecewise-constant controls on ``n_control`` cells.

    Returns ``ActionResult`` with ``value = inf`` and an empty control when no
    ``|phi| <= 1`` reproduces ``f`` to ``tol_feas`` in sup-norm.
    """
    if f.values[0] != 0.0:
        raise DomainError("kernel_rate needs f(0) = 0")
    n_control = f.n if n_control is None else int(n_control)
    if A is None:
        A = forward_matrix(spec, f.n, n_control)
    target = f.values[1:]
    if not np.any(target):
        return ActionResult(0.0, np.zeros(n_control), 0.0, 0)
    gap, _ = min_feasibility(A, target)
    if gap > tol_feas:
        return ActionResult(INF, np.empty(0), gap, 0)
    return _solve_barrier_al(A, target, 1.0 / n_control, tol_feas, delta_bar, mu0, outer, max_newton)


def endpoint_kernel_rate(spec: KernelSpec, t: float, threshold: float, n_control: int = 200) -> float:
    """``inf {int lambda_star(phi) : int K(t, r) phi(r) dr >= threshold}``.

    The minimiser is ``phi = mu k / sqrt(1 + mu**2 k**2)`` with ``k`` the cell
    means of ``K(t, .)``; ``mu`` is found by root bracketing.
    """
    if threshold <= 0:
        return 0.0
    cells = uniform_grid(n_control)
    h = 1.0 / n_control
    a = np.array([cell_integral(spec, t, float(cells[j]), float(cells[j + 1])) for j in range(n_control)])
    k = a / h
    reach = float(np.sum(np.abs(a)))
    if threshold > reach:
        return INF
    if threshold == reach:
        return h * float(np.count_nonzero(k))

    def lhs(mu):
        return float(np.dot(a, mu * k / np.sqrt(1.0 + (mu * k) ** 2))) - threshold

    hi = 1.0
    while lhs(hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            return INF
    mu = optimize.brentq(lhs, 0.0, hi, xtol=1e-14, rtol=1e-14)
    phi = mu * k / np.sqrt(1.0 + (mu * k) ** 2)
    return h * float(np.sum(lambda_star_array(phi)))


# ---------------------------------------------------------------------------
# Freidlin-Wentzell rate


def sde_controls(
    b: Callable[[float], float],
    sigma: Callable[[float], float],
    x: GridPath,
    tol_sigma: float = TOL_SIGMA,
    tol_feas: float = TOL_FEAS,
) -> np.ndarray | None:
    """Cellwise controls ``(slope - b(x_i)) / sigma(x_i)``; ``None`` when unreachable."""
    dt = np.diff(x.grid)
    phi = np.empty(x.n)
    for i in range(x.n):
        xi = float(x.values[i])
        drift_gap = (x.values[i + 1] - xi) / dt[i] - b(xi)
        s = sigma(xi)
        if abs(s) > tol_sigma:
            phi[i] = drift_gap / s
        elif abs(drift_gap) <= tol_feas:
            phi[i] = 0.0
        else:
            return None
    return phi


def sde_rate(
    b: Callable[[float], float],
    sigma: Callable[[float], float],
    x0: float,
    x: GridPath,
    model: RateModel,
    tol_sigma: float = TOL_SIGMA,
    tol_feas: float = TOL_FEAS,
) -> float:
    """``sum_i dt_i Gamma(phi_i)`` with the control fixed cell by cell by the path."""
    if x.values[0] != x0:
        raise DomainError("path must start at x0")
    phi = sde_controls(b, sigma, x, tol_sigma, tol_feas)
    if phi is None:
        return INF
    total = 0.0
    for h, p in zip(np.diff(x.grid), phi):
        c = gamma_cost(model, float(p))
        if c == INF:
            return INF
        total += h * c
    return total


def constant_sde_endpoint_rate(
    b0: float, s0: float, x0: float, t: float, threshold: float, model: RateModel
) -> float:
    """Rate of ``{X(t) >= threshold}`` for ``dX = b0 dt + s0 phi dt``: a straight-line control."""
    need = threshold - x0 - b0 * t
    if need <= 0:
        return 0.0
    if s0 == 0:
        return INF
    return t * gamma_cost(model, need / (abs(s0) * t))


def theta_endpoint_rate(t: float, threshold: float) -> float:
    """Rate of ``{eps Theta_eps(t) >= threshold}``: ``t lambda_star(threshold / t)``."""
    if threshold <= 0:
        return 0.0
    return t * lambda_star(threshold / t)

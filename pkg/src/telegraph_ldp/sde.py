"""Event-exact integration of ``dX = b(X) dt + lam(eps) sigma(X) dTheta_eps``.

Between jumps of the telegraph noise the equation is the autonomous ODE
``x' = b(x) +/- (lam / eps) sigma(x)``.  Each such segment is integrated with
an adaptive Dormand-Prince 5(4) pair that lands exactly on jump times and on
output nodes, so no step ever straddles a sign flip.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import DivergenceError, DomainError
from .grids import uniform_grid
from .rates import RateModel
from .telegraph import TelegraphPath

TOL_ODE = 1e-10
MAGNITUDE_CAP = 1e8


@dataclass(frozen=True)
class LambdaSpec:
    """Noise intensity ``lam(eps)``: ``kappa * eps``, ``eps**beta`` or a callable."""

    form: Literal["kappa_eps", "power", "custom"]
    kappa: float | None = None
    beta: float | None = None
    func: Callable[[float], float] | None = None

    def __post_init__(self):
        if self.form == "kappa_eps" and not (self.kappa and self.kappa > 0):
            raise DomainError("kappa_eps needs kappa > 0")
        if self.form == "power" and not (self.beta is not None and 0.0 < self.beta < 1.0):
            raise DomainError("power form needs beta in (0, 1)")
        if self.form == "custom" and self.func is None:
            raise DomainError("custom form needs a function")

    @classmethod
    def kappa_eps(cls, kappa: float) -> "LambdaSpec":
        return cls("kappa_eps", kappa=float(kappa))

    @classmethod
    def power(cls, beta: float) -> "LambdaSpec":
        return cls("power", beta=float(beta))

    @classmethod
    def custom(cls, func: Callable[[float], float]) -> "LambdaSpec":
        return cls("custom", func=func)

    def __call__(self, epsilon: float) -> float:
        if self.form == "kappa_eps":
            value = self.kappa * epsilon
        elif self.form == "power":
            value = epsilon**self.beta
        else:
            value = float(self.func(epsilon))
        if not value > 0:
            raise DomainError(f"lambda({epsilon}) = {value} must be positive")
        return value

    def rate_model(self) -> RateModel | None:
        """Limit regime of the rate function, if the form determines one."""
        if self.form == "kappa_eps":
            return RateModel.kappa_regime(self.kappa)
        if self.form == "power":
            return RateModel.gaussian()
        return None

    def describe(self) -> dict:
        if self.form == "kappa_eps":
            return {"form": "kappa_eps", "kappa": self.kappa}
        if self.form == "power":
            return {"form": "power", "beta": self.beta}
        return {"form": "custom"}


@dataclass(frozen=True)
class DriftDiffusion:
    """Scalar coefficients ``b`` and ``sigma``.

    ``constants = (b0, s0)`` marks constant coefficients, which lets callers
    use the closed-form solution ``x0 + b0 t + lam s0 Theta(t)``.
    """

    b: Callable[[float], float]
    sigma: Callable[[float], float]
    lipschitz_hint: float | None = None
    constants: tuple[float, float] | None = None

    @classmethod
    def constant(cls, b0: float = 0.0, s0: float = 1.0) -> "DriftDiffusion":
        return cls(lambda z: b0, lambda z: s0, lipschitz_hint=None, constants=(float(b0), float(s0)))

    def check_lipschitz(self, n_pairs: int = 1000, spread: float = 10.0, seed: int = 0) -> bool | None:
        """Spot-check the Lipschitz bound on random pairs; ``None`` without a hint."""
        if self.constants is not None:
            return True
        if self.lipschitz_hint is None:
            return None
        rng = np.random.default_rng(seed)
        z = rng.uniform(-spread, spread, size=(n_pairs, 2))
        L = self.lipschitz_hint
        for u, v in z:
            lhs = abs(self.b(u) - self.b(v)) + abs(self.sigma(u) - self.sigma(v))
            if lhs > L * abs(u - v) * (1 + 1e-12) + 1e-15:
                return False
        return True


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


def dp45_segment(
    rhs: Callable[[Sequence[float]], tuple],
    y: tuple,
    t0: float,
    t1: float,
    rtol: float = TOL_ODE,
    atol: float = 1e-14,
    h0: float | None = None,
    cap: float = MAGNITUDE_CAP,
) -> tuple[tuple, float]:
    """Integrate the autonomous system ``y' = rhs(y)`` from ``t0`` to exactly ``t1``.

    Returns the end state and the last accepted step size (a good first guess
    for the next segment).
    """
    dim = len(y)
    t = t0
    h = (t1 - t0) if h0 is None else min(h0, t1 - t0)
    last_h = h
    k1 = rhs(y)
    while t < t1:
        if t + h >= t1 or t + 1.01 * h >= t1:
            h = t1 - t
        ks = [k1]
        for stage in range(1, 7):
            a = _A[stage]
            ys = tuple(y[d] + h * sum(a[j] * ks[j][d] for j in range(stage)) for d in range(dim))
            ks.append(rhs(ys))
        y_new = ys  # stage 7 evaluates at the 5th-order solution (FSAL)
        err = 0.0
        for d in range(dim):
            e = h * sum(_E[j] * ks[j][d] for j in range(7))
            sc = atol + rtol * max(abs(y[d]), abs(y_new[d]))
            err = max(err, abs(e) / sc)
        if err <= 1.0 or h <= 1e-15 * max(1.0, abs(t)):
            t = t1 if t + h >= t1 else t + h
            y = y_new
            k1 = ks[6]
            last_h = h
            if any(abs(v) > cap or math.isnan(v) for v in y):
                raise DivergenceError(f"trajectory exceeded {cap:g} at t={t:.6g}", t)
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err**-0.2))
            h *= factor
        else:
            h *= max(0.2, 0.9 * err**-0.25)
    return y, last_h


def _breakpoints(path: TelegraphPath, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merged, sorted integration breakpoints and the indices of the grid nodes among them."""
    end = float(grid[-1])
    jumps = path.jump_times[path.jump_times <= end]
    pts = np.union1d(np.union1d(jumps, grid), [0.0])
    return pts, np.searchsorted(pts, grid)


def _resolve_grid(grid, path: TelegraphPath) -> np.ndarray:
    nodes = uniform_grid(grid) if isinstance(grid, (int, np.integer)) else np.asarray(grid, dtype=float)
    if nodes[0] < 0 or nodes[-1] > path.horizon or np.any(np.diff(nodes) <= 0):
        raise DomainError("grid must be increasing within [0, horizon]")
    return nodes


def simulate(
    dd: DriftDiffusion,
    x0: float,
    epsilon: float,
    lam: LambdaSpec,
    path: TelegraphPath,
    grid=200,
    tol_ode: float = TOL_ODE,
    cap: float = MAGNITUDE_CAP,
) -> np.ndarray:
    """``X_eps`` at the grid nodes along one telegraph path."""
    if path.epsilon != epsilon:
        raise DomainError("path epsilon does not match")
    nodes = _resolve_grid(grid, path)
    speed = lam(epsilon) / epsilon
    b, sigma = dd.b, dd.sigma
    pts, node_idx = _breakpoints(path, nodes)
    xs = np.empty(pts.size)
    xs[0] = x0
    y = (float(x0),)
    h = None
    for k in range(pts.size - 1):
        t0, t1 = float(pts[k]), float(pts[k + 1])
        sgn = 1.0 if path.segment_values[path.segment_index(t0, "right")] > 0 else -1.0
        v = sgn * speed
        y, h = dp45_segment(lambda s: (b(s[0]) + v * sigma(s[0]),), y, t0, t1, tol_ode, h0=h, cap=cap)
        xs[k + 1] = y[0]
    return xs[node_idx]


@dataclass
class MartingaleDiagnostics:
    """Terms of the Ito decomposition of ``X_eps(t) - x0`` at grid nodes."""

    grid: np.ndarray
    x: np.ndarray
    drift: np.ndarray
    martingale: np.ndarray
    stieltjes: np.ndarray
    residual: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))


def martingale_diagnostics(
    dd: DriftDiffusion,
    x0: float,
    epsilon: float,
    lam: LambdaSpec,
    path: TelegraphPath,
    grid=200,
    tol_ode: float = TOL_ODE,
    cap: float = MAGNITUDE_CAP,
) -> MartingaleDiagnostics:
    """Drift, compensated-jump and ``d theta`` Stieltjes terms along the trajectory.

    The compensator ``int sigma(X) theta ds`` and the drift integral are
    carried as extra ODE components, and jump sums use ``sigma(X(tau-))``.
    """
    if path.epsilon != epsilon:
        raise DomainError("path epsilon does not match")
    nodes = _resolve_grid(grid, path)
    lam_e = lam(epsilon)
    b, sigma = dd.b, dd.sigma
    pts, node_idx = _breakpoints(path, nodes)
    jump_set = set(path.jump_times.tolist())
    eps2 = epsilon * epsilon

    n = pts.size
    x = np.empty(n)
    drift = np.empty(n)
    comp = np.empty(n)
    jump_sum = np.empty(n)
    dtheta_sum = np.empty(n)
    x[0], drift[0], comp[0], jump_sum[0], dtheta_sum[0] = x0, 0.0, 0.0, 0.0, 0.0
    y = (float(x0), 0.0, 0.0)
    h = None
    js = ds = 0.0
    for k in range(n - 1):
        t0, t1 = float(pts[k]), float(pts[k + 1])
        th = float(path.segment_values[path.segment_index(t0, "right")])

        def rhs(s, th=th):
            sg = sigma(s[0])
            return (b(s[0]) + lam_e * th * sg, b(s[0]), sg * th)

        y, h = dp45_segment(rhs, y, t0, t1, tol_ode, h0=h, cap=cap)
        if t1 in jump_set:
            # X is continuous, so X(tau-) = X(tau)
            s_left = sigma(y[0])
            th_left = th
            th_right = float(path.segment_values[path.segment_index(t1, "right")])
            js += s_left * th_left
            ds += s_left * (th_right - th_left)
        x[k + 1], drift[k + 1], comp[k + 1] = y
        jump_sum[k + 1], dtheta_sum[k + 1] = js, ds

    martingale = -lam_e * eps2 * (jump_sum - comp / eps2)
    stieltjes = -0.5 * lam_e * eps2 * dtheta_sum
    residual = (x - x0) - (drift + martingale + stieltjes)
    sl = node_idx
    return MartingaleDiagnostics(nodes, x[sl], drift[sl], martingale[sl], stieltjes[sl], residual[sl])


def apriori_bound(dd: DriftDiffusion, x0: float, epsilon: float, lam: LambdaSpec, L: float | None = None) -> float:
    """Gronwall bound on ``sup_t |X_eps(t)|`` over ``[0, 1]`` under a Lipschitz constant ``L``.

    ``|x'| <= |b(0)| + r |sigma(0)| + L (1 + r) |x|`` with ``r = lam / eps``.
    """
    L = dd.lipschitz_hint if L is None else L
    if L is None:
        if dd.constants is None:
            raise DomainError("a Lipschitz constant is required")
        L = 0.0
    r = lam(epsilon) / epsilon
    b0, s0 = abs(dd.b(0.0)), abs(dd.sigma(0.0))
    return (abs(x0) + b0 + r * s0) * math.exp(L * (1.0 + r))


def noise_free_flow(b: Callable[[float], float], x0: float, grid=200, tol_ode: float = TOL_ODE) -> np.ndarray:
    """Solution of ``x' = b(x)`` at the grid nodes."""
    nodes = uniform_grid(grid) if isinstance(grid, (int, np.integer)) else np.asarray(grid, dtype=float)
    out = np.empty(nodes.size)
    out[0] = x0
    y, h = (float(x0),), None
    for k in range(nodes.size - 1):
        y, h = dp45_segment(lambda s: (b(s[0]),), y, float(nodes[k]), float(nodes[k + 1]), tol_ode, h0=h)
        out[k + 1] = y[0]
    return out


def trajectory_csv(grid: np.ndarray, x: np.ndarray) -> str:
    lines = ["t,x"] + [f"{t:.17g},{v:.17g}" for t, v in zip(grid, x)]
    return "\n".join(lines) + "\n"


def run_manifest(epsilon: float, lam: LambdaSpec, seed, tol_ode: float, lipschitz_ok: bool | None) -> str:
    return json.dumps(
        {
            "epsilon": epsilon,
            "lambda_form": lam.describe(),
            "seed": {"seed": seed.seed, "stream": seed.stream},
            "tolerances": {"tol_ode": tol_ode, "magnitude_cap": MAGNITUDE_CAP},
            "lipschitz_check": lipschitz_ok,
        },
        indent=2,
        sort_keys=True,
    )

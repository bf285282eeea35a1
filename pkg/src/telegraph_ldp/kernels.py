"""Volterra kernels ``K(t, r)`` and the telegraph-driven process ``G_eps``.

Built-in families:

* ``brownian``: ``xi(t) eta(r) 1{0 < r <= t}``
* ``fbm``: the Molchan-Golosov type kernel of fractional Brownian motion
* ``ou``: ``C exp(lam (r - t)) 1{0 < r <= t}``
* ``tabulated``: bilinear interpolation of grid values

The fBm kernel involves an inner integral with an integrable endpoint
singularity.  It is evaluated with QUADPACK's algebraic-weight rule on the
singular half and plain adaptive quadrature on the other half.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import integrate, interpolate, special, stats

from .errors import DomainError, NumericError
from .grids import GridPath, uniform_grid
from .telegraph import TelegraphPath, Weight, integrate_theta

Family = Literal["brownian", "fbm", "ou", "tabulated"]

DEFAULT_GRID = 200
# (H2) is a small-gap statement; fitting on short gaps avoids the OU curvature at large gaps
H2_MAX_GAP = 0.1


def _one(_x: float) -> float:
    return 1.0


@dataclass(frozen=True, eq=False)
class KernelSpec:
    family: Family
    params: dict = field(default_factory=dict)

    # constructors -------------------------------------------------------

    @classmethod
    def brownian(
        cls,
        xi: Callable[[float], float] | None = None,
        eta: Callable[[float], float] | None = None,
        eta_antiderivative: Callable[[float], float] | None = None,
    ) -> "KernelSpec":
        if eta is None and eta_antiderivative is None:
            eta_antiderivative = lambda r: r  # noqa: E731
        return cls(
            "brownian",
            {"xi": xi or _one, "eta": eta or _one, "eta_antiderivative": eta_antiderivative,
             "unit": xi is None and eta is None},
        )

    @classmethod
    def fbm(cls, H: float) -> "KernelSpec":
        if not 0.0 < H < 1.0:
            raise DomainError("Hurst index must lie in (0, 1)")
        if H == 0.5:
            return cls.brownian()
        return cls("fbm", {"H": float(H)})

    @classmethod
    def ou(cls, C: float, lam: float) -> "KernelSpec":
        if not C > 0 or not lam > 0:
            raise DomainError("OU kernel needs C > 0 and lambda > 0")
        return cls("ou", {"C": float(C), "lam": float(lam)})

    @classmethod
    def tabulated(cls, t_nodes: Sequence[float], r_nodes: Sequence[float], values) -> "KernelSpec":
        t_nodes = np.asarray(t_nodes, dtype=float)
        r_nodes = np.asarray(r_nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (t_nodes.size, r_nodes.size):
            raise DomainError("values must have shape (len(t_nodes), len(r_nodes))")
        if t_nodes[0] != 0.0 or t_nodes[-1] != 1.0 or r_nodes[0] != 0.0 or r_nodes[-1] != 1.0:
            raise DomainError("tabulated grids must span [0, 1]")
        if np.any(values[0] != 0.0):
            raise DomainError("tabulated kernel violates K(0, r) = 0")
        interp = interpolate.RegularGridInterpolator((t_nodes, r_nodes), values, method="linear")
        return cls("tabulated", {"t_nodes": t_nodes, "r_nodes": r_nodes, "values": values, "interp": interp})

    # metadata -----------------------------------------------------------

    @property
    def has_antiderivative(self) -> bool:
        if self.family == "ou":
            return True
        return self.family == "brownian" and self.params["eta_antiderivative"] is not None

    @property
    def h2_exponent(self) -> float:
        """Exponent ``alpha`` expected in the (H2) modulus bound."""
        return 2.0 * self.params["H"] if self.family == "fbm" else 1.0

    def describe(self) -> dict:
        if self.family == "fbm":
            return {"family": "fbm", "H": self.params["H"]}
        if self.family == "ou":
            return {"family": "ou", "C": self.params["C"], "lambda": self.params["lam"]}
        if self.family == "brownian":
            return {"family": "brownian", "unit": bool(self.params["unit"])}
        return {"family": "tabulated", "shape": list(self.params["values"].shape)}


# ---------------------------------------------------------------------------
# fBm kernel


def fbm_constant(H: float) -> float:
    """Normalising constant ``c_H`` (H > 1/2) or ``c~_H`` (H < 1/2), via log-gamma."""
    if H > 0.5:
        a, b = 2.0 - 2.0 * H, H - 0.5
        log_beta = special.gammaln(a) + special.gammaln(b) - special.gammaln(a + b)
        return math.exp(0.5 * (math.log(H * (2.0 * H - 1.0)) - log_beta))
    a, b = 1.0 - 2.0 * H, H + 0.5
    log_beta = special.gammaln(a) + special.gammaln(b) - special.gammaln(a + b)
    return math.exp(0.5 * (math.log(2.0 * H / (1.0 - 2.0 * H)) - log_beta))


FBM_TOL = 1e-11


def _quad(f, a, b, **kw) -> float:
    res = integrate.quad(f, a, b, epsabs=FBM_TOL, epsrel=FBM_TOL, limit=200, full_output=1, **kw)
    if len(res) > 3 and res[1] > 1e-8 * max(1.0, abs(res[0])):
        raise NumericError(f"fBm inner integral on [{a}, {b}] did not converge", res[1])
    return res[0]


def fbm_inner_integral(H: float, t: float, r: float) -> float:
    """Inner u-integral of the fBm kernel, for ``0 < r < t``.

    H > 1/2: ``int_r^t (u-r)**(H-3/2) u**(H-1/2) du`` via ``u = r + (t-r) v``.
    H < 1/2: ``int_r^t (u-r)**(H-1/2) u**(H-3/2) du`` via ``u = r / w``, an incomplete beta function.
    """
    if H > 0.5:
        span = t - r
        a, b = H - 1.5, H - 0.5
        smooth = lambda v: (r + span * v) ** b  # noqa: E731
        head = _quad(smooth, 0.0, 0.5, weight="alg", wvar=(a, 0.0))
        tail = _quad(lambda v: v**a * smooth(v), 0.5, 1.0)
        return span ** (H - 0.5) * (head + tail)
    # incomplete beta integral int_{r/t}^1 w**(-2H) (1-w)**(H-1/2) dw
    p, q = 1.0 - 2.0 * H, H + 0.5
    return r ** (2.0 * H - 1.0) * special.beta(p, q) * special.betaincc(p, q, r / t)


def _fbm_value(H: float, t: float, r: float) -> float:
    if r >= t or r <= 0.0 or t <= 0.0:
        return 0.0
    c = fbm_constant(H)
    inner = fbm_inner_integral(H, t, r)
    if H > 0.5:
        return c * r ** (0.5 - H) * inner
    return c * ((t / r) ** (H - 0.5) * (t - r) ** (H - 0.5) - (H - 0.5) * r ** (0.5 - H) * inner)


# ---------------------------------------------------------------------------
# public operations


def kernel_value(spec: KernelSpec, t: float, r: float) -> float:
    if not (0.0 <= t <= 1.0 and 0.0 <= r <= 1.0):
        raise DomainError("t and r must lie in [0, 1]")
    p = spec.params
    if spec.family == "brownian":
        return float(p["xi"](t) * p["eta"](r)) if 0.0 < r <= t else 0.0
    if spec.family == "ou":
        return p["C"] * math.exp(p["lam"] * (r - t)) if 0.0 < r <= t else 0.0
    if spec.family == "fbm":
        return _fbm_value(p["H"], t, r)
    return float(p["interp"]((t, r)))


def kernel_weight(spec: KernelSpec, t: float) -> Weight:
    """The map ``r -> K(t, r)`` as an ``integrate_theta`` weight."""
    p = spec.params
    if spec.family == "brownian":
        xi_t = float(p["xi"](t))
        if p["eta_antiderivative"] is not None:
            E = p["eta_antiderivative"]
            E0 = E(0.0)
            return Weight(
                lambda r: kernel_value(spec, t, r),
                lambda r: xi_t * (E(min(r, t)) - E0),
                (t,),
            )
        return Weight(lambda r: kernel_value(spec, t, r), None, (t,))
    if spec.family == "ou":
        C, lam = p["C"], p["lam"]
        return Weight(
            lambda r: kernel_value(spec, t, r),
            lambda r: C * math.exp(lam * (min(r, t) - t)) / lam,
            (t,),
        )
    if spec.family == "fbm":
        return Weight(lambda r: kernel_value(spec, t, r), None, (t,))
    return Weight(lambda r: kernel_value(spec, t, r), None, tuple(p["r_nodes"][1:-1]) + (t,))


def cell_integral(spec: KernelSpec, t: float, a: float, b: float) -> float:
    """``int_a^b K(t, r) dr``, closed form where available."""
    if b <= a:
        return 0.0
    w = kernel_weight(spec, t)
    if w.antiderivative is not None:
        return w.antiderivative(b) - w.antiderivative(a)
    hi = min(b, t) if spec.family in ("fbm", "brownian", "ou") else b
    if hi <= a:
        return 0.0
    pts = [x for x in w.breakpoints if a < x < hi]
    val, err = integrate.quad(w.func, a, hi, points=pts or None, limit=200, epsabs=1e-11, epsrel=1e-10)
    return float(val)


def g_epsilon(spec: KernelSpec, path: TelegraphPath, grid: np.ndarray | int = DEFAULT_GRID,
              tol_quad: float = 1e-10) -> np.ndarray:
    """``G_eps(t_i) = int_0^1 K(t_i, r) theta_eps(r) dr`` at every grid node."""
    if path.horizon < 1.0:
        raise DomainError("path horizon must cover [0, 1]")
    nodes = uniform_grid(grid) if isinstance(grid, (int, np.integer)) else np.asarray(grid, dtype=float)
    out = np.empty(nodes.size)
    for i, t in enumerate(nodes):
        if t == 0.0 and spec.family != "tabulated":
            out[i] = 0.0
            continue
        w = kernel_weight(spec, float(t))
        upper = 1.0 if spec.family == "tabulated" else float(t)
        out[i] = integrate_theta(path, w, 0.0, upper, tol_quad=tol_quad)
    return out


def h2_modulus(spec: KernelSpec, s: float, t: float, tol: float = 1e-8) -> float:
    """``int_0^1 (K(t, r) - K(s, r))**2 dr``."""
    if not 0.0 <= s <= t <= 1.0:
        raise DomainError("need 0 <= s <= t <= 1")
    if s == t:
        return 0.0
    f = lambda r: (kernel_value(spec, t, r) - kernel_value(spec, s, r)) ** 2  # noqa: E731
    pts = {s, t}
    if spec.family == "tabulated":
        pts.update(spec.params["r_nodes"][1:-1])
    pts = sorted(x for x in pts if 0.0 < x < 1.0)
    edges = [0.0] + pts + [1.0]
    total, err_total = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if spec.family != "tabulated" and a >= t:
            break
        res = integrate.quad(f, a, b, epsabs=tol, epsrel=tol, limit=400, full_output=1)
        total += res[0]
        err_total += res[1]
    if err_total > 100 * tol * max(1.0, total):
        raise NumericError("h2 modulus quadrature did not reach its tolerance", err_total)
    return total


def fbm_variance(H: float, t: float) -> float:
    """``int_0^t K^H(t, r)**2 dr`` by quadrature; equals ``t**(2H)`` for a correct kernel."""
    spec = KernelSpec.fbm(H)
    return h2_modulus(spec, 0.0, t, tol=1e-9)


@dataclass(frozen=True)
class H2Fit:
    exponent: float
    log_constant: float
    constant: float
    max_ratio: float
    n_pairs: int


def fit_h2(spec: KernelSpec, n: int = 20, max_gap: float | None = H2_MAX_GAP) -> H2Fit:
    """Fit ``h2(s, t) ~ C (t - s)**alpha`` over pairs of an n-point grid with gap at most ``max_gap``.

    ``exponent`` is the least-squares log-log slope; ``constant`` is
    ``max h2 / (t - s)**alpha`` with the family's expected ``alpha``.
    """
    nodes = np.linspace(0.0, 1.0, n + 1)[1:]
    gaps, vals = [], []
    for i, s in enumerate(nodes):
        for t in nodes[i + 1 :]:
            if max_gap is not None and t - s > max_gap + 1e-12:
                continue
            gaps.append(t - s)
            vals.append(h2_modulus(spec, float(s), float(t)))
    gaps, vals = np.array(gaps), np.array(vals)
    if np.unique(np.round(gaps, 12)).size < 2:
        raise DomainError("the modulus fit needs at least two distinct gaps; raise n or max_gap")
    reg = stats.linregress(np.log(gaps), np.log(vals))
    alpha = spec.h2_exponent
    ratio = vals / gaps**alpha
    return H2Fit(float(reg.slope), float(reg.intercept), float(ratio.max()), float(ratio.max()), int(gaps.size))


def h1_violation(spec: KernelSpec, n: int = 101) -> float:
    """``max_r |K(0, r)|`` over a grid of r."""
    return max(abs(kernel_value(spec, 0.0, float(r))) for r in np.linspace(0.0, 1.0, n))


def selftest_report(specs: Sequence[KernelSpec] | None = None, n: int = 20, max_gap: float = H2_MAX_GAP) -> dict:
    if specs is None:
        specs = [KernelSpec.brownian(), KernelSpec.ou(1.0, 1.0), KernelSpec.fbm(0.25), KernelSpec.fbm(0.75)]
    rows = []
    for spec in specs:
        fit = fit_h2(spec, n=n, max_gap=max_gap)
        rows.append({
            **spec.describe(),
            "h1_max_violation": h1_violation(spec),
            "h2_expected_exponent": spec.h2_exponent,
            "h2_fitted_exponent": fit.exponent,
            "h2_fitted_constant": fit.constant,
            "n_pairs": fit.n_pairs,
        })
    return {"kernels": rows}


def selftest_json(**kw) -> str:
    return json.dumps(selftest_report(**kw), indent=2, sort_keys=True)

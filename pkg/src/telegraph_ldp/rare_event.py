"""Monte Carlo estimates of speed-scaled log-probabilities.

Rare events are sampled under a two-rate telegraph (flip rate ``a_plus`` out
of +1, ``a_minus`` out of -1) and reweighted with the exact likelihood ratio
against the nominal rate ``eps**-2``.  Work is split into shards with their
own RNG substream; shard results are folded in shard order, so the outcome
does not depend on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import stats

from . import action
from .errors import DomainError
from .grids import GridPath
from .kernels import KernelSpec, g_epsilon
from .rates import INF, RateModel, chernoff_log_bound, gamma_cost
from .rng import RngSeed
from .sde import DriftDiffusion, LambdaSpec, simulate
from .telegraph import Initial, TelegraphBatch, sample_batch, theta_integral

SHARD_SIZE = 10_000
MIN_SAMPLES = 1000
EPS_STREAM_STRIDE = 1 << 32
Z95 = stats.norm.ppf(0.975)


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class Process:
    """The observed process: ``eps Theta_eps``, ``eps G_eps`` or ``X_eps``."""

    kind: Literal["theta_integral", "g_eps", "sde"]
    kernel: KernelSpec | None = None
    dd: DriftDiffusion | None = None
    x0: float = 0.0
    lam: LambdaSpec | None = None

    @classmethod
    def theta_integral(cls) -> "Process":
        return cls("theta_integral")

    @classmethod
    def g_eps(cls, spec: KernelSpec) -> "Process":
        return cls("g_eps", kernel=spec)

    @classmethod
    def sde(cls, dd: DriftDiffusion, x0: float, lam: LambdaSpec) -> "Process":
        return cls("sde", dd=dd, x0=float(x0), lam=lam)

    def speed(self, epsilon: float) -> float:
        if self.kind == "sde":
            return self.lam(epsilon) ** 2
        return epsilon**2

    def is_affine_in_theta(self) -> bool:
        return self.kind == "theta_integral" or (self.kind == "sde" and self.dd.constants is not None)

    def affine_map(self, epsilon: float, t: float) -> tuple[float, float]:
        """``(shift, scale)`` with ``process(t) = shift + scale * eps Theta_eps(t)``."""
        if self.kind == "theta_integral":
            return 0.0, 1.0
        b0, s0 = self.dd.constants
        return self.x0 + b0 * t, self.lam(epsilon) / epsilon * s0

    def rate_model(self) -> RateModel | None:
        if self.kind == "sde":
            return self.lam.rate_model()
        return RateModel.unit_path()

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "g_eps":
            out["kernel"] = self.kernel.describe()
        if self.kind == "sde":
            out.update(x0=self.x0, lambda_form=self.lam.describe(),
                       constants=None if self.dd.constants is None else list(self.dd.constants))
        return out


@dataclass(frozen=True, eq=False)
class EventSpec:
    kind: Literal["endpoint_exceeds", "sup_ball"]
    process: Process
    t: float = 1.0
    threshold: float = 0.0
    target: GridPath | None = None
    radius: float = 0.0
    complementary: bool = False

    def __post_init__(self):
        if self.kind == "endpoint_exceeds":
            if not 0.0 < self.t <= 1.0:
                raise DomainError("event time must lie in (0, 1]")
        elif self.kind == "sup_ball":
            if self.target is None or not self.radius > 0:
                raise DomainError("sup_ball needs a target path and radius > 0")
        else:
            raise DomainError(f"unknown event kind {self.kind!r}")

    @classmethod
    def endpoint(cls, process: Process, t: float, threshold: float) -> "EventSpec":
        return cls("endpoint_exceeds", process, t=float(t), threshold=float(threshold))

    @classmethod
    def ball(cls, process: Process, target: GridPath, radius: float, complementary: bool = False) -> "EventSpec":
        return cls("sup_ball", process, target=target, radius=float(radius), complementary=complementary)

    @property
    def horizon(self) -> float:
        return self.t if self.kind == "endpoint_exceeds" else 1.0

    def required_slope(self, epsilon: float) -> float | None:
        """Mean slope of ``eps Theta_eps`` on ``[0, t]`` needed to hit an affine endpoint event."""
        if self.kind != "endpoint_exceeds" or not self.process.is_affine_in_theta():
            return None
        shift, scale = self.process.affine_map(epsilon, self.t)
        if scale == 0:
            return None
        if scale < 0:
            # event reads eps Theta <= (threshold - shift) / scale; no upward tilt applies
            return None
        return (self.threshold - shift) / scale / self.t

    def indicator(self, batch: TelegraphBatch) -> np.ndarray:
        proc = self.process
        eps = batch.epsilon
        if self.kind == "endpoint_exceeds":
            if proc.is_affine_in_theta():
                shift, scale = proc.affine_map(eps, self.t)
                values = shift + scale * batch.scaled_integral(self.t)
            else:
                values = np.array([_path_values(proc, batch.path(i), np.array([0.0, self.t]))[-1]
                                   for i in range(batch.n)])
            return values > self.threshold
        grid = self.target.grid
        hits = np.empty(batch.n, dtype=bool)
        for i in range(batch.n):
            path = batch.path(i)
            if proc.is_affine_in_theta():
                # piecewise-linear difference: its sup sits on a grid node or a jump time
                knots = np.union1d(grid, path.jump_times)
                shift, scale = proc.affine_map(eps, 0.0)
                b0 = 0.0 if proc.kind == "theta_integral" else proc.dd.constants[0]
                vals = shift + b0 * knots + scale * eps * theta_integral(path, knots)
                dev = np.max(np.abs(vals - self.target(knots)))
            else:
                dev = np.max(np.abs(_path_values(proc, path, grid) - self.target.values))
            hits[i] = dev < self.radius
        return ~hits if self.complementary else hits

    def rate_reference(self, epsilon: float | None = None) -> float:
        """Variational rate of the threshold point (endpoint) or the ball centre."""
        proc = self.process
        model = proc.rate_model()
        if self.kind == "endpoint_exceeds":
            if proc.kind == "theta_integral":
                return action.theta_endpoint_rate(self.t, self.threshold)
            if proc.kind == "g_eps":
                return action.endpoint_kernel_rate(proc.kernel, self.t, self.threshold)
            if proc.dd.constants is not None and model is not None:
                b0, s0 = proc.dd.constants
                return action.constant_sde_endpoint_rate(b0, s0, proc.x0, self.t, self.threshold, model)
            return math.nan
        if self.complementary:
            return math.nan
        if proc.kind == "theta_integral":
            return action.path_rate(self.target)
        if proc.kind == "g_eps":
            return action.kernel_rate(proc.kernel, self.target).value
        if model is None:
            return math.nan
        return action.sde_rate(proc.dd.b, proc.dd.sigma, proc.x0, self.target, model)

    def chernoff_bound(self, epsilon: float, initial: Initial) -> float | None:
        """Speed-scaled Chernoff upper bound on ``log P``, exact at finite eps."""
        slope = self.required_slope(epsilon)
        if slope is None or initial not in ("plus", "minus", "stationary"):
            return None
        T = self.t / epsilon**2
        if initial == "minus":
            # the -1 start is the +1 start seen through xi -> -xi
            bound = _chernoff_minus(slope, T)
        else:
            bound = chernoff_log_bound(slope, T, initial)
        return self.process.speed(epsilon) * T * bound

    def describe(self) -> dict:
        out = {"kind": self.kind, "process": self.process.describe()}
        if self.kind == "endpoint_exceeds":
            out.update(t=self.t, threshold=self.threshold)
        else:
            out.update(radius=self.radius, complementary=self.complementary, target_n=self.target.n)
        return out


def _chernoff_minus(x: float, T: float) -> float:
    from .rates import finite_eps_cgf, _argmax

    if x <= 0:
        return 0.0
    if x > 1:
        return -INF
    a_hi = min(4.0 * (x / math.sqrt(max(1.0 - x * x, 1e-300)) + 1.0), 1e6)
    return -_argmax(lambda a: a * x - finite_eps_cgf(-a, T, "plus"), 0.0, a_hi)[1]


def _path_values(proc: Process, path, grid: np.ndarray) -> np.ndarray:
    eps = path.epsilon
    if proc.kind == "theta_integral":
        return eps * theta_integral(path, grid)
    if proc.kind == "g_eps":
        return eps * g_epsilon(proc.kernel, path, grid)
    return simulate(proc.dd, proc.x0, eps, proc.lam, path, grid)


# ---------------------------------------------------------------------------
# samplers and estimates


@dataclass(frozen=True)
class Sampler:
    kind: Literal["plain", "tilted"] = "plain"
    a_plus: float | None = None
    a_minus: float | None = None

    @classmethod
    def plain(cls) -> "Sampler":
        return cls("plain")

    @classmethod
    def tilted(cls, a_plus: float, a_minus: float) -> "Sampler":
        if not a_plus > 0 or not a_minus > 0:
            raise DomainError("tilted rates must be positive")
        return cls("tilted", float(a_plus), float(a_minus))

    def rates(self) -> tuple[float, float] | None:
        return None if self.kind == "plain" else (self.a_plus, self.a_minus)

    def describe(self) -> dict:
        return {"kind": self.kind, "a_plus": self.a_plus, "a_minus": self.a_minus}


def mean_shift_tilt(epsilon: float, slope: float) -> Sampler:
    """Flip rates whose stationary mean of ``xi`` equals ``slope``.

    The product ``a_plus * a_minus`` is held at ``eps**-4``, which makes the
    tilt the Doob transform of the optimal exponential change of measure.
    """
    if not -1.0 < slope < 1.0:
        raise DomainError("mean-shift tilt needs |slope| < 1")
    alpha = epsilon**-2
    r = math.sqrt((1.0 - slope) / (1.0 + slope))
    return Sampler.tilted(alpha * r, alpha / r)


def auto_sampler(event: EventSpec, epsilon: float) -> Sampler:
    slope = event.required_slope(epsilon)
    if slope is None or slope <= 0.0 or slope >= 1.0:
        return Sampler.plain()
    return mean_shift_tilt(epsilon, slope)


@dataclass
class LdpEstimate:
    epsilon: float
    n_samples: int
    n_hits: int
    p_hat: float
    ci_low: float
    ci_high: float
    speed: float
    scaled_log_p: float
    rate_reference: float
    sampler: Sampler
    sum_w: float = 0.0
    sum_w2: float = 0.0

    @property
    def scaled_log_ci(self) -> tuple[float, float]:
        lo = self.speed * math.log(self.ci_low) if self.ci_low > 0 else -INF
        hi = self.speed * math.log(self.ci_high) if self.ci_high > 0 else -INF
        return lo, hi

    def to_row(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "n_samples": self.n_samples,
            "n_hits": self.n_hits,
            "p_hat": self.p_hat,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "speed": self.speed,
            "scaled_log_p": self.scaled_log_p,
            "rate_reference": self.rate_reference,
            "sampler": self.sampler.kind,
            "a_plus": self.sampler.a_plus,
            "a_minus": self.sampler.a_minus,
        }


def _finish(epsilon, n, hits, sum_w, sum_w2, speed, rate_ref, sampler) -> LdpEstimate:
    if sampler.kind == "plain":
        p_hat = hits / n
        ci = stats.binomtest(int(hits), int(n)).proportion_ci(confidence_level=0.95, method="exact")
        lo, hi = float(ci.low), float(ci.high)
    else:
        p_hat = sum_w / n
        if hits == 0:
            lo, hi = 0.0, 1.0 - 0.025 ** (1.0 / n)
        else:
            var = max(sum_w2 / n - p_hat * p_hat, 0.0) * n / (n - 1)
            half = Z95 * math.sqrt(var / n)
            lo, hi = max(p_hat - half, 0.0), p_hat + half
    scaled = speed * math.log(p_hat) if p_hat > 0 else -INF
    return LdpEstimate(epsilon, int(n), int(hits), p_hat, lo, hi, speed, scaled, rate_ref, sampler, sum_w, sum_w2)


def pool(a: LdpEstimate, b: LdpEstimate) -> LdpEstimate:
    """Combine two estimates of the same event and sampler by pooling hits and weights."""
    if a.epsilon != b.epsilon or a.sampler != b.sampler:
        raise DomainError("only estimates with the same epsilon and sampler can be pooled")
    return _finish(
        a.epsilon, a.n_samples + b.n_samples, a.n_hits + b.n_hits, a.sum_w + b.sum_w,
        a.sum_w2 + b.sum_w2, a.speed, a.rate_reference, a.sampler,
    )


def _shard(
    indicator: Callable[[TelegraphBatch], np.ndarray],
    epsilon: float, horizon: float, n: int, seed: RngSeed, initial: Initial, rates,
) -> tuple[int, float, float]:
    batch = sample_batch(epsilon, horizon, n, seed, initial, rates)
    hit = np.asarray(indicator(batch), dtype=bool)
    if rates is None:
        k = int(np.count_nonzero(hit))
        return k, float(k), float(k)
    w = np.where(hit, np.exp(batch.log_likelihood_ratio()), 0.0)
    return int(np.count_nonzero(hit)), float(np.sum(w)), float(np.sum(w * w))


def estimate_indicator(
    indicator: Callable[[TelegraphBatch], np.ndarray],
    epsilon: float,
    horizon: float,
    n: int,
    seed: RngSeed,
    sampler: Sampler = Sampler(),
    initial: Initial = "plus",
    speed: float | None = None,
    rate_reference: float = math.nan,
    threads: int = 1,
    shard_size: int = SHARD_SIZE,
) -> LdpEstimate:
    """Estimate ``P(indicator)`` from ``n`` paths split into substream shards."""
    if n < 1:
        raise DomainError("need at least one sample")
    sizes = [shard_size] * (n // shard_size)
    if n % shard_size:
        sizes.append(n % shard_size)
    rates = sampler.rates()
    jobs = [(indicator, epsilon, horizon, m, seed.substream(i), initial, rates) for i, m in enumerate(sizes)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool_:
            parts = list(pool_.map(lambda job: _shard(*job), jobs))
    else:
        parts = [_shard(*job) for job in jobs]
    hits, sum_w, sum_w2 = 0, 0.0, 0.0
    for k, s1, s2 in parts:
        hits += k
        sum_w += s1
        sum_w2 += s2
    speed = epsilon**2 if speed is None else speed
    return _finish(epsilon, n, hits, sum_w, sum_w2, speed, rate_reference, sampler)


def estimate(
    event: EventSpec,
    epsilon: float,
    n: int,
    seed: RngSeed,
    sampler: Sampler | Literal["auto"] = "plain",
    initial: Initial = "plus",
    threads: int = 1,
    shard_size: int = SHARD_SIZE,
) -> LdpEstimate:
    """One ``LdpEstimate`` of ``P(event)`` at ``epsilon``."""
    if n < MIN_SAMPLES:
        raise DomainError(f"need n >= {MIN_SAMPLES} samples")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if sampler == "auto":
        sampler = auto_sampler(event, epsilon)
    elif sampler == "plain":
        sampler = Sampler.plain()
    return estimate_indicator(
        event.indicator, epsilon, event.horizon, n, seed, sampler, initial,
        speed=event.process.speed(epsilon), rate_reference=event.rate_reference(epsilon),
        threads=threads, shard_size=shard_size,
    )


# ---------------------------------------------------------------------------
# curves


@dataclass
class Regression:
    intercept: float
    slope: float
    intercept_se: float
    residuals: list
    n_points: int
    model: str = "affine in epsilon, least squares"


@dataclass
class LdpCurve:
    event: dict
    estimates: list
    excluded: list
    regression: Regression | None
    rate_reference: float
    chernoff: list = field(default_factory=list)

    @property
    def target(self) -> float:
        return -self.rate_reference

    def to_dict(self) -> dict:
        return {
            "event": self.event,
            "estimates": [e.to_row() for e in self.estimates],
            "excluded_epsilons": self.excluded,
            "regression": None if self.regression is None else asdict(self.regression),
            "rate_reference": self.rate_reference,
            "target": self.target,
            "chernoff_bounds": self.chernoff,
        }


def affine_extrapolation(eps: Sequence[float], values: Sequence[float]) -> Regression | None:
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    if eps.size < 3:
        return None
    fit = stats.linregress(eps, values)
    resid = values - (fit.intercept + fit.slope * eps)
    return Regression(float(fit.intercept), float(fit.slope), float(fit.intercept_stderr),
                      [float(r) for r in resid], int(eps.size))


def ldp_curve(
    event: EventSpec,
    epsilons: Sequence[float],
    n_per: int,
    seed: RngSeed,
    sampler: Literal["auto", "plain"] = "auto",
    initial: Initial = "plus",
    threads: int = 1,
) -> LdpCurve:
    """Estimates along decreasing ``epsilons`` plus an affine extrapolation to ``eps = 0``."""
    epsilons = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise DomainError("epsilons must be strictly decreasing")
    ests, excluded, bounds = [], [], []
    for k, eps in enumerate(epsilons):
        s = seed.substream((k + 1) * EPS_STREAM_STRIDE)
        samp = auto_sampler(event, eps) if sampler == "auto" else Sampler.plain()
        est = estimate(event, eps, n_per, s, samp, initial, threads)
        ests.append(est)
        bounds.append(event.chernoff_bound(eps, initial))
        if est.n_hits == 0 or not math.isfinite(est.scaled_log_p):
            excluded.append(eps)
    good = [e for e in ests if e.epsilon not in excluded]
    reg = affine_extrapolation([e.epsilon for e in good], [e.scaled_log_p for e in good])
    return LdpCurve(event.describe(), ests, excluded, reg, event.rate_reference(), bounds)


def chernoff_violations(curve: LdpCurve) -> list[float]:
    """Epsilons whose CI lies entirely above the exact Chernoff bound."""
    bad = []
    for est, bound in zip(curve.estimates, curve.chernoff):
        if bound is None or est.n_hits == 0:
            continue
        lo, _ = est.scaled_log_ci
        if lo > bound:
            bad.append(est.epsilon)
    return bad


# ---------------------------------------------------------------------------
# phase transition


@dataclass
class PhaseCell:
    regime: str
    parameter: float
    target: float
    curve: LdpCurve
    passed: bool

    @property
    def intercept(self) -> float:
        return math.nan if self.curve.regression is None else self.curve.regression.intercept

    def to_row(self) -> dict:
        reg = self.curve.regression
        return {
            "regime": self.regime,
            "parameter": self.parameter,
            "target": self.target,
            "intercept": self.intercept,
            "intercept_se": math.nan if reg is None else reg.intercept_se,
            "scaled_log_p": [e.scaled_log_p for e in self.curve.estimates],
            "passed": self.passed,
        }


def _cell_passes(curve: LdpCurve, target: float, rel_tol: float) -> bool:
    if math.isinf(target):
        finite = [e.scaled_log_p for e in curve.estimates if math.isfinite(e.scaled_log_p)]
        # no stabilisation: either nothing is ever hit or the values keep falling
        return all(b < a for a, b in zip(finite, finite[1:]))
    if curve.regression is None:
        return False
    return abs(curve.regression.intercept - target) <= rel_tol * abs(target)


def phase_transition_report(
    kappa_list: Sequence[float],
    beta_list: Sequence[float],
    threshold: float,
    epsilons: Sequence[float],
    n_per: int,
    seed: RngSeed,
    rel_tol: float = 0.25,
    initial: Initial = "plus",
    threads: int = 1,
) -> list[PhaseCell]:
    """Extrapolated intercepts for ``dX = lam dTheta`` against the regime's closed-form rate."""
    cells = []
    dd = DriftDiffusion.constant(0.0, 1.0)
    specs = [("kappa", k, LambdaSpec.kappa_eps(k)) for k in kappa_list]
    specs += [("gaussian", b, LambdaSpec.power(b)) for b in beta_list]
    for j, (regime, param, lam) in enumerate(specs):
        event = EventSpec.endpoint(Process.sde(dd, 0.0, lam), 1.0, threshold)
        target = -gamma_cost(lam.rate_model(), threshold)
        curve = ldp_curve(event, epsilons, n_per, seed.substream((j + 1) << 40), "auto", initial, threads)
        cells.append(PhaseCell(regime, float(param), target, curve, _cell_passes(curve, target, rel_tol)))
    return cells

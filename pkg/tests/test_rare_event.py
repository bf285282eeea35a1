from __future__ import annotations

import math

import numpy as np
import pytest

from telegraph_ldp.errors import DomainError
from telegraph_ldp.grids import GridPath
from telegraph_ldp.kernels import KernelSpec
from telegraph_ldp.rare_event import (
    EventSpec,
    Process,
    Sampler,
    affine_extrapolation,
    auto_sampler,
    chernoff_violations,
    estimate,
    estimate_indicator,
    ldp_curve,
    mean_shift_tilt,
    pool,
)
from telegraph_ldp.rates import INF, lambda_star
from telegraph_ldp.rng import RngSeed
from telegraph_ldp.sde import DriftDiffusion, LambdaSpec

LSTAR_HALF = lambda_star(0.5)
THETA_HALF = EventSpec.endpoint(Process.theta_integral(), 1.0, 0.5)


def test_sign_symmetry_gives_one_half():
    event = EventSpec.endpoint(Process.theta_integral(), 1.0, 0.0)
    est = estimate(event, 0.3, 20_000, RngSeed(1), initial="stationary")
    assert est.ci_low <= 0.5 <= est.ci_high
    assert est.ci_low <= est.p_hat <= est.ci_high


def test_estimate_requires_enough_samples():
    with pytest.raises(DomainError):
        estimate(THETA_HALF, 0.3, 999, RngSeed(1))


def test_mean_shift_tilt_has_the_target_drift():
    s = mean_shift_tilt(0.3, 0.5)
    ap, am = s.rates()
    alpha = 0.3**-2
    assert ap * am == pytest.approx(alpha * alpha)
    # stationary occupation of +1 is am / (ap + am), so the mean of xi is (am - ap) / (ap + am)
    assert (am - ap) / (ap + am) == pytest.approx(0.5)


def test_auto_sampler_falls_back_to_plain():
    assert auto_sampler(EventSpec.endpoint(Process.theta_integral(), 1.0, 0.0), 0.3).kind == "plain"
    assert auto_sampler(THETA_HALF, 0.3).kind == "tilted"


def test_tilted_agrees_with_plain_and_is_tighter():
    plain = estimate(THETA_HALF, 0.3, 100_000, RngSeed(2, 1), "plain")
    tilted = estimate(THETA_HALF, 0.3, 100_000, RngSeed(2, 2), "auto")
    assert tilted.sampler.kind == "tilted"
    half_p = (plain.ci_high - plain.ci_low) / 2
    half_t = (tilted.ci_high - tilted.ci_low) / 2
    assert abs(plain.p_hat - tilted.p_hat) <= math.hypot(half_p, half_t)
    assert half_t < half_p


def test_tilted_estimator_is_unbiased_on_a_jump_count_event():
    # at eps = 1 on [0, 1] the nominal jump count is Poisson(1)
    exact = math.exp(-1.0) * (1 + 1 + 1 / 2 + 1 / 6)

    def at_most_three_jumps(batch):
        return np.sum(np.isfinite(batch.jumps), axis=1) <= 3

    est = estimate_indicator(at_most_three_jumps, 1.0, 1.0, 50_000, RngSeed(3), Sampler.tilted(2.5, 0.6))
    assert abs(est.p_hat - exact) <= 3 * (est.ci_high - est.ci_low)


def test_plain_estimate_respects_the_chernoff_bound():
    est = estimate(THETA_HALF, 0.3, 100_000, RngSeed(4))
    bound = THETA_HALF.chernoff_bound(0.3, "plus")
    assert est.scaled_log_ci[0] <= bound
    # the plus start has a finite-eps bias below the limit value
    assert est.scaled_log_p < -LSTAR_HALF


def test_seed_partition_pooling():
    n1, n2 = 3000, 2000
    whole = estimate(THETA_HALF, 0.4, n1 + n2, RngSeed(11, 1), shard_size=n1)
    a = estimate(THETA_HALF, 0.4, n1, RngSeed(11, 1).substream(0))
    b = estimate(THETA_HALF, 0.4, n2, RngSeed(11, 1).substream(1))
    pooled = pool(a, b)
    assert (whole.n_hits, whole.n_samples, whole.p_hat) == (pooled.n_hits, pooled.n_samples, pooled.p_hat)
    assert whole.ci_low == pooled.ci_low and whole.ci_high == pooled.ci_high


def test_pooling_of_independent_streams():
    a = estimate(THETA_HALF, 0.4, 2000, RngSeed(11, 1))
    b = estimate(THETA_HALF, 0.4, 3000, RngSeed(11, 2))
    c = pool(a, b)
    assert c.n_hits == a.n_hits + b.n_hits
    assert c.n_samples == 5000
    with pytest.raises(DomainError):
        pool(a, estimate(THETA_HALF, 0.3, 2000, RngSeed(11, 3)))


def test_results_do_not_depend_on_thread_count():
    runs = [estimate(THETA_HALF, 0.3, 40_000, RngSeed(5), "auto", threads=t) for t in (1, 4, 8)]
    assert runs[0] == runs[1] == runs[2]


def test_zero_hits_sentinel():
    event = EventSpec.endpoint(Process.theta_integral(), 1.0, 1.5)
    est = estimate(event, 0.3, 1000, RngSeed(6))
    assert est.n_hits == 0
    assert est.p_hat == 0.0
    assert est.scaled_log_p == -INF
    assert est.ci_low == 0.0
    assert est.ci_high == pytest.approx(1 - 0.025 ** (1 / 1000), rel=1e-9)


def test_g_eps_event_for_brownian_kernel_matches_theta_integral():
    g_event = EventSpec.endpoint(Process.g_eps(KernelSpec.brownian()), 1.0, 0.3)
    t_event = EventSpec.endpoint(Process.theta_integral(), 1.0, 0.3)
    a = estimate(g_event, 0.5, 2000, RngSeed(7))
    b = estimate(t_event, 0.5, 2000, RngSeed(7))
    assert a.n_hits == b.n_hits


def test_sde_event_with_unit_noise_reduces_to_the_telegraph_event():
    sde_event = EventSpec.endpoint(Process.sde(DriftDiffusion.constant(), 0.0, LambdaSpec.kappa_eps(1.0)), 1.0, 0.5)
    a = estimate(sde_event, 0.4, 5000, RngSeed(8))
    b = estimate(THETA_HALF, 0.4, 5000, RngSeed(8))
    assert a.n_hits == b.n_hits
    assert sde_event.rate_reference() == pytest.approx(LSTAR_HALF)


def test_ball_event_around_zero_is_likely():
    target = GridPath(np.zeros(21))
    inside = EventSpec.ball(Process.theta_integral(), target, 0.6)
    outside = EventSpec.ball(Process.theta_integral(), target, 0.6, complementary=True)
    a = estimate(inside, 0.2, 2000, RngSeed(9))
    b = estimate(outside, 0.2, 2000, RngSeed(9))
    assert a.n_hits + b.n_hits == 2000
    assert a.p_hat > 0.9


def test_affine_extrapolation_on_exact_line():
    reg = affine_extrapolation([0.4, 0.3, 0.2], [-0.3, -0.25, -0.2])
    assert reg.intercept == pytest.approx(-0.1)
    assert reg.slope == pytest.approx(-0.5)
    assert affine_extrapolation([0.4, 0.3], [-0.3, -0.25]) is None


def test_curve_requires_decreasing_epsilons():
    with pytest.raises(DomainError):
        ldp_curve(THETA_HALF, [0.3, 0.35, 0.2], 1000, RngSeed(1))


def test_small_curve_is_monotone_and_respects_chernoff():
    curve = ldp_curve(THETA_HALF, [0.5, 0.4, 0.3], 20_000, RngSeed(10))
    vals = [e.scaled_log_p for e in curve.estimates]
    # the finite-eps values sit below the limit and climb toward it as eps shrinks
    assert vals[0] < vals[1] < vals[2] < -LSTAR_HALF
    assert chernoff_violations(curve) == []
    assert curve.rate_reference == pytest.approx(LSTAR_HALF)
    assert set(curve.to_dict()) >= {"estimates", "regression"}

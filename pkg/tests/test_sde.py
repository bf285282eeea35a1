from __future__ import annotations

import json
import math

import numpy as np
import pytest

from telegraph_ldp.errors import DivergenceError, DomainError
from telegraph_ldp.rates import RateModel
from telegraph_ldp.rng import RngSeed
from telegraph_ldp.sde import (
    DriftDiffusion,
    LambdaSpec,
    apriori_bound,
    martingale_diagnostics,
    noise_free_flow,
    run_manifest,
    simulate,
    trajectory_csv,
)
from telegraph_ldp.telegraph import decomposition_residual, sample_path, theta_integral

GRID = np.linspace(0.0, 1.0, 101)


def test_lambda_spec_forms():
    assert LambdaSpec.kappa_eps(2.0)(0.1) == pytest.approx(0.2)
    assert LambdaSpec.power(0.5)(0.25) == 0.5
    assert LambdaSpec.custom(lambda e: e * e)(0.3) == pytest.approx(0.09)
    assert LambdaSpec.kappa_eps(0.7).rate_model() == RateModel.kappa_regime(0.7)
    assert LambdaSpec.power(0.5).rate_model() == RateModel.gaussian()
    assert LambdaSpec.custom(lambda e: e).rate_model() is None


def test_lambda_spec_validation():
    with pytest.raises(DomainError):
        LambdaSpec.kappa_eps(0.0)
    with pytest.raises(DomainError):
        LambdaSpec.power(1.0)
    with pytest.raises(DomainError):
        LambdaSpec.custom(lambda e: -1.0)(0.1)


@pytest.mark.parametrize("eps", [1.0, 0.3, 0.1])
def test_additive_noise_is_linear_in_theta(eps):
    lam = LambdaSpec.kappa_eps(1.3)
    for s in range(20):
        path = sample_path(eps, seed=RngSeed(10, s))
        x = simulate(DriftDiffusion.constant(0.0, 1.0), 0.4, eps, lam, path, GRID)
        exact = 0.4 + lam(eps) * theta_integral(path, GRID)
        assert np.max(np.abs(x - exact)) <= 1e-10


def test_noise_free_decay():
    dd = DriftDiffusion(lambda z: -z, lambda z: 0.0)
    path = sample_path(0.3, seed=RngSeed(1))
    x = simulate(dd, 1.0, 0.3, LambdaSpec.kappa_eps(1.0), path, GRID)
    assert x[-1] == pytest.approx(math.exp(-1.0), abs=1e-8)
    assert np.max(np.abs(noise_free_flow(lambda z: -z, 1.0, GRID) - np.exp(-GRID))) <= 1e-8


def test_multiplicative_noise_is_exponential_of_theta():
    dd = DriftDiffusion(lambda z: 0.0, lambda z: z, lipschitz_hint=1.0)
    lam = LambdaSpec.kappa_eps(0.5)
    for eps in (1.0, 0.2):
        for s in range(20):
            path = sample_path(eps, seed=RngSeed(2, s))
            x = simulate(dd, 1.0, eps, lam, path, GRID)
            assert np.max(np.abs(x - np.exp(lam(eps) * theta_integral(path, GRID)))) <= 1e-8


def test_simulation_is_deterministic():
    dd = DriftDiffusion(math.sin, math.cos, lipschitz_hint=2.0)
    path = sample_path(0.2, seed=RngSeed(7))
    a = simulate(dd, 0.1, 0.2, LambdaSpec.power(0.5), path, GRID)
    b = simulate(dd, 0.1, 0.2, LambdaSpec.power(0.5), path, GRID)
    assert np.array_equal(a, b)


def test_simulate_rejects_mismatched_epsilon():
    path = sample_path(0.2, seed=RngSeed(7))
    with pytest.raises(DomainError):
        simulate(DriftDiffusion.constant(), 0.0, 0.3, LambdaSpec.kappa_eps(1.0), path, GRID)


def test_blow_up_raises_divergence():
    dd = DriftDiffusion(lambda z: z * z, lambda z: 0.0)
    path = sample_path(1.0, seed=RngSeed(3))
    with pytest.raises(DivergenceError):
        simulate(dd, 2.0, 1.0, LambdaSpec.kappa_eps(1.0), path, GRID)


def test_diagnostics_without_noise():
    dd = DriftDiffusion(lambda z: -z, lambda z: 0.0)
    path = sample_path(0.5, seed=RngSeed(4))
    d = martingale_diagnostics(dd, 1.0, 0.5, LambdaSpec.kappa_eps(1.0), path, GRID)
    assert np.all(d.martingale == 0.0)
    assert np.all(d.stieltjes == 0.0)
    assert np.max(np.abs(d.drift - (d.x - 1.0))) <= 1e-9


def test_diagnostics_reduce_to_telegraph_decomposition():
    eps = 0.2
    lam = LambdaSpec.kappa_eps(1.0)
    path = sample_path(eps, seed=RngSeed(5))
    d = martingale_diagnostics(DriftDiffusion.constant(), 0.0, eps, lam, path, GRID)
    assert d.max_residual <= 1e-10
    tele = np.array([decomposition_residual(path, float(t)) for t in GRID])
    assert np.max(np.abs(tele)) <= 1e-10


def test_diagnostics_for_a_lipschitz_pair():
    eps = 0.2
    dd = DriftDiffusion(math.sin, math.cos, lipschitz_hint=2.0)
    worst = 0.0
    for s in range(100):
        path = sample_path(eps, seed=RngSeed(6, s))
        d = martingale_diagnostics(dd, 0.3, eps, LambdaSpec.kappa_eps(1.0), path, GRID)
        worst = max(worst, d.max_residual)
    assert worst <= 1e-6


def test_apriori_bound_holds_on_sampled_paths():
    dd = DriftDiffusion(lambda z: 0.5 - z, lambda z: 1.0 + 0.5 * math.sin(z), lipschitz_hint=1.5)
    for eps, lam in ((0.5, LambdaSpec.kappa_eps(1.0)), (0.2, LambdaSpec.power(0.5))):
        bound = apriori_bound(dd, 0.2, eps, lam)
        for s in range(50):
            path = sample_path(eps, seed=RngSeed(8, s))
            x = simulate(dd, 0.2, eps, lam, path, GRID)
            assert np.max(np.abs(x)) <= bound


def test_apriori_bound_needs_a_constant():
    with pytest.raises(DomainError):
        apriori_bound(DriftDiffusion(math.sin, math.cos), 0.0, 0.5, LambdaSpec.kappa_eps(1.0))


def test_degenerate_regime_collapses_to_the_flow():
    # lam = eps**2 gives lam / eps -> 0, so the noise vanishes in the limit
    dd = DriftDiffusion(lambda z: -z, lambda z: 1.0, lipschitz_hint=1.0)
    lam = LambdaSpec.custom(lambda e: e * e)
    grid = np.linspace(0.0, 1.0, 21)
    flow = np.exp(-grid)
    sups = []
    for eps in (0.4, 0.2, 0.1):
        worst = 0.0
        for s in range(1000):
            path = sample_path(eps, seed=RngSeed(9, s))
            x = simulate(dd, 1.0, eps, lam, path, grid, tol_ode=1e-8)
            worst = max(worst, float(np.max(np.abs(x - flow))))
        sups.append(worst)
    assert sups[0] > sups[1] > sups[2]


def test_lipschitz_spot_check():
    assert DriftDiffusion(math.sin, math.cos, lipschitz_hint=2.0).check_lipschitz() is True
    assert DriftDiffusion(lambda z: z * z, math.cos, lipschitz_hint=1.0).check_lipschitz() is False
    assert DriftDiffusion(math.sin, math.cos).check_lipschitz() is None


def test_trajectory_csv_and_manifest():
    text = trajectory_csv(np.array([0.0, 0.5]), np.array([1.0, 0.1]))
    assert text.splitlines() == ["t,x", "0,1", "0.5,0.10000000000000001"]
    m = json.loads(run_manifest(0.2, LambdaSpec.power(0.5), RngSeed(3, 1), 1e-10, None))
    assert m["lambda_form"] == {"form": "power", "beta": 0.5}
    assert m["seed"] == {"seed": 3, "stream": 1}
    assert m["lipschitz_check"] is None

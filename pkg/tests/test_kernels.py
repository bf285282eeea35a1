from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import special

from telegraph_ldp.errors import DomainError
from telegraph_ldp.kernels import (
    KernelSpec,
    fbm_inner_integral,
    fbm_variance,
    fit_h2,
    g_epsilon,
    h1_violation,
    h2_modulus,
    kernel_value,
    selftest_report,
)
from telegraph_ldp.rng import RngSeed
from telegraph_ldp.telegraph import TelegraphPath, sample_path, theta_integral

BUILTIN = [KernelSpec.brownian(), KernelSpec.ou(1.0, 1.0), KernelSpec.fbm(0.25), KernelSpec.fbm(0.75)]


def test_kernels_vanish_at_time_zero():
    for spec in BUILTIN:
        assert h1_violation(spec) == 0.0


def test_ou_kernel_on_the_diagonal():
    assert kernel_value(KernelSpec.ou(1.0, 1.0), 1.0, 1.0) == 1.0


def test_half_hurst_maps_to_brownian():
    assert KernelSpec.fbm(0.5).family == "brownian"


def test_invalid_specs():
    with pytest.raises(DomainError):
        KernelSpec.fbm(1.0)
    with pytest.raises(DomainError):
        KernelSpec.ou(-1.0, 1.0)
    with pytest.raises(DomainError):
        KernelSpec.tabulated([0, 1], [0, 1], [[1.0, 0.0], [1.0, 1.0]])


@pytest.mark.parametrize("H", [0.25, 0.75])
@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_fbm_variance_identity(H, t):
    assert abs(fbm_variance(H, t) - t ** (2 * H)) <= 1e-4


def test_fbm_inner_integral_against_hypergeometric_form():
    # H > 1/2: int_r^t (u-r)^(H-3/2) u^(H-1/2) du with u = r (1 + z v)
    H, t, r = 0.75, 0.9, 0.3
    a = b = H - 0.5
    z = (t - r) / r
    closed = (t - r) ** a * r**b / a * special.hyp2f1(-b, a, a + 1, -z)
    assert fbm_inner_integral(H, t, r) == pytest.approx(closed, rel=1e-9)


def test_brownian_g_equals_theta_integral():
    path = sample_path(0.2, seed=RngSeed(5))
    grid = np.linspace(0.0, 1.0, 201)
    g = g_epsilon(KernelSpec.brownian(), path, grid)
    assert np.max(np.abs(g - theta_integral(path, grid))) <= 1e-12


def test_ou_g_on_a_jumpless_path():
    path = TelegraphPath(1.0, 1.0, 1, np.array([]))
    g = g_epsilon(KernelSpec.ou(1.0, 1.0), path, np.array([0.0, 1.0]))
    assert g[-1] == pytest.approx(1.0 - math.exp(-1.0), abs=1e-12)


def test_g_scales_with_one_over_epsilon():
    jumps = np.array([0.13, 0.4, 0.77])
    grid = np.linspace(0.0, 1.0, 11)
    for spec in (KernelSpec.ou(2.0, 0.5), KernelSpec.fbm(0.75)):
        g1 = g_epsilon(spec, TelegraphPath(1.0, 1.0, 1, jumps), grid)
        g5 = g_epsilon(spec, TelegraphPath(0.2, 1.0, 1, jumps), grid)
        assert np.allclose(g5, 5.0 * g1, rtol=1e-9, atol=1e-12)


def test_g_is_odd_in_the_initial_sign():
    jumps = np.array([0.2, 0.45, 0.9])
    grid = np.linspace(0.0, 1.0, 6)
    for spec in BUILTIN:
        up = g_epsilon(spec, TelegraphPath(0.5, 1.0, 1, jumps), grid)
        down = g_epsilon(spec, TelegraphPath(0.5, 1.0, -1, jumps), grid)
        assert np.array_equal(up, -down)


def test_brownian_modulus_is_the_gap():
    spec = KernelSpec.brownian()
    assert h2_modulus(spec, 0.2, 0.7) == pytest.approx(0.5, abs=1e-9)
    assert h2_modulus(spec, 0.4, 0.4) == 0.0


def test_h2_fits():
    for spec in BUILTIN:
        fit = fit_h2(spec, n=20, max_gap=0.1)
        assert abs(fit.exponent - spec.h2_exponent) <= 0.1 * spec.h2_exponent
        assert math.isfinite(fit.constant)


def test_fit_needs_distinct_gaps():
    with pytest.raises(DomainError):
        fit_h2(KernelSpec.brownian(), n=10, max_gap=0.1)


def test_tabulated_kernel_interpolates():
    t = np.linspace(0, 1, 5)
    r = np.linspace(0, 1, 5)
    vals = np.outer(t, np.ones_like(r))
    spec = KernelSpec.tabulated(t, r, vals)
    assert kernel_value(spec, 0.6, 0.3) == pytest.approx(0.6)
    assert h1_violation(spec) == 0.0


def test_selftest_report_shape():
    rep = selftest_report([KernelSpec.brownian()], n=20)
    row = rep["kernels"][0]
    assert row["family"] == "brownian"
    assert row["h2_fitted_exponent"] == pytest.approx(1.0, abs=1e-9)

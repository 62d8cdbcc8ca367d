import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from openkpz.kernels import (
    BOUNDS,
    CORE_BOUNDS,
    DEFAULT_SUITE_PARAMS,
    BoundContext,
    BoundFitReport,
    beta_integral,
    boundary_defect,
    bound_suite,
    build_kernel,
    chapman_kolmogorov_error,
    duhamel_boundary_residual,
    duhamel_robin_residual,
    full_line_chapman_kolmogorov_error,
    full_line_kernel,
    full_line_values,
    image_kernel,
    integral_inequality_check,
    observed_order,
    padded_image_kernel,
    robin_kernel,
)
from openkpz.model import ModelParams, derive_coefficients
from openkpz.operators import nn_laplacian


def derived(N, m=1, A=(0.0, 0.0)):
    alpha = (1.0, 0.5, 0.25)[:m]
    gamma = (-0.5, -0.25, -0.1)[:m]
    return derive_coefficients(ModelParams(N=N, m=m, alpha=alpha, gamma=gamma, A_minus=A[0], A_plus=A[1]))


def test_full_line_initial_value_and_mass():
    d = derived(32, 2)
    g0 = full_line_kernel(d, 0.0, np.arange(-5, 6))
    np.testing.assert_allclose(g0, (np.arange(-5, 6) == 0).astype(float), atol=1e-10)
    for t in (1e-3, 1e-2, 0.1):
        z = np.arange(-2000, 2001)
        assert full_line_kernel(d, t, z).sum() == pytest.approx(1.0, abs=1e-12)


def test_full_line_matches_padded_expm():
    d = derived(32)
    t = 0.01
    width = int(12 * 32 * math.sqrt(t)) + 40
    n = 2 * width + 1
    A = 0.5 * d.tilde_alpha[0] * 32**2 * (np.eye(n, k=1) + np.eye(n, k=-1) - 2 * np.eye(n))
    row = scipy.linalg.expm(t * A)[width]
    z = np.arange(-30, 31)
    np.testing.assert_allclose(full_line_kernel(d, t, z), row[z + width], atol=1e-8)


@pytest.mark.parametrize("t", [1e-3, 1e-2, 1e-1])
def test_kernel_triangle(t):
    d = derived(32)
    image = image_kernel(d, t)
    eig = build_kernel("nn_neumann", d).P(t)
    padded = padded_image_kernel(d, t)
    np.testing.assert_allclose(image, eig, atol=1e-8)
    np.testing.assert_allclose(image, padded, atol=1e-8)
    np.testing.assert_allclose(eig, padded, atol=1e-8)
    np.testing.assert_allclose(image, image.T, atol=1e-12)
    np.testing.assert_allclose(image.sum(axis=1), 1.0, atol=1e-8)


def test_long_range_image_kernel_mass():
    d = derived(40, 3)
    T = image_kernel(d, 0.01)
    np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-8)


@pytest.mark.parametrize("N", [16, 64, 256])
@pytest.mark.parametrize("kind", ["image_sum", "nn_neumann", "nn_robin", "neumann", "robin"])
def test_chapman_kolmogorov(kind, N):
    d = derived(N, 2, A=(0.5, -0.5))
    K = build_kernel(kind, d, 0.5, -0.5)
    for s, t in [(1e-3, 2e-3), (0.01, 0.03)]:
        assert chapman_kolmogorov_error(K, s, t) <= 1e-8


def test_full_line_chapman_kolmogorov():
    d = derived(64, 3)
    assert full_line_chapman_kolmogorov_error(d, 0.01, 0.02) <= 1e-12


def test_robin_neumann_limit_matches_image():
    d = derived(32)
    np.testing.assert_allclose(robin_kernel(d, 0, 0, "nn").P(0.02), image_kernel(d, 0.02), atol=1e-8)
    np.testing.assert_allclose(robin_kernel(d, 0, 0, "long_range").P(0.02).sum(axis=1), 1.0, atol=1e-12)


def test_robin_mass_decays():
    d = derived(32)
    K = robin_kernel(d, 1.0, 0.0, "nn")
    masses = [K.P(t).sum(axis=1) for t in (1e-3, 1e-2, 1e-1)]
    assert np.all(masses[0] < 1 + 1e-12)
    assert masses[0][0] < 1
    assert np.all(np.diff(np.array(masses), axis=0) <= 1e-12)
    assert not K.conserves_mass


def test_robin_generator_ghost_convention():
    d = derived(20)
    K = robin_kernel(d, 0.5, -0.3, "nn")
    D = 0.5 * d.second_moment
    np.testing.assert_allclose(K.generator, nn_laplacian(20, D, 1 - 0.5 / 20, 1 + 0.3 / 20).matrix)


def test_boundary_defect_single_range_vanishes():
    d = derived(32)
    assert np.abs(boundary_defect(d, 0.01)).max() <= 1e-8


def test_boundary_defect_is_confined_to_clusters():
    d = derived(32, 2)
    D = boundary_defect(d, 0.01)
    assert np.abs(D[2:-2]).max() <= 1e-6
    assert np.abs(D[:2]).max() > 1.0


@pytest.mark.parametrize("m", [1, 2])
def test_duhamel_boundary(m):
    d = derived(32, m)
    assert duhamel_boundary_residual(d, 0.0, 0.01) <= 1e-6
    assert duhamel_boundary_residual(d, 0.3, 0.3) == 0.0


def test_duhamel_boundary_order():
    d = derived(32, 2)
    res = [duhamel_boundary_residual(d, 0.0, 0.01, panels=n) for n in (32, 64, 128)]
    assert np.all(observed_order(res) > 3.5)


def test_duhamel_robin():
    d = derived(32, 2, A=(0.5, -0.5))
    assert duhamel_robin_residual(d, 0.5, -0.5, 0.0, 0.05) <= 1e-6
    assert duhamel_robin_residual(d, 0.0, 0.0, 0.0, 0.05) == 0.0
    res = [duhamel_robin_residual(d, 0.5, -0.5, 0.0, 0.05, panels=n) for n in (128, 256, 512)]
    assert np.all(observed_order(res) > 3.5)


def test_beta_integral_case():
    rep = integral_inequality_check(0.5, 0.5)
    assert rep.integral == pytest.approx(math.pi, rel=1e-10)
    assert rep.ratio == pytest.approx(math.pi, rel=1e-10)
    assert beta_integral(0.5, 0.5) == pytest.approx(math.pi)


def test_integral_trivial_exponents():
    rep = integral_inequality_check(0.0, 0.0, 0.2, 0.7)
    assert rep.integral == pytest.approx(0.5, rel=1e-12)
    assert rep.ratio == pytest.approx(1.0, rel=1e-12)


def test_integral_cutoff_uniform_in_eps():
    ratios = [integral_inequality_check(0.25, 1.5, 0.0, 1.0, eps).ratio for eps in np.geomspace(1e-6, 0.5, 12)]
    assert max(ratios) < 3 and min(ratios) > 0.3


def test_integral_input_checks():
    with pytest.raises(ValueError):
        integral_inequality_check(1.2, 0.5)
    with pytest.raises(ValueError):
        integral_inequality_check(0.25, 0.5, eps=0.1)


@settings(max_examples=30, deadline=None)
@given(c1=st.floats(0.0, 0.95), c2=st.floats(0.0, 0.95), rho=st.floats(0.01, 10))
def test_integral_matches_beta_function(c1, c2, rho):
    rep = integral_inequality_check(c1, c2, 1.0, 1.0 + rho)
    assert rep.integral == pytest.approx(beta_integral(c1, c2, rho), rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(N=st.integers(8, 48), t=st.floats(1e-4, 0.2), m=st.integers(1, 2))
def test_kernels_are_stochastic(N, t, m):
    if 4 * m > N:
        return
    d = derived(N, m)
    for kind in ("image_sum", "nn_neumann", "neumann"):
        P = build_kernel(kind, d).P(t)
        assert P.min() >= -1e-12
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-8)


def test_bound_fit_report_verdict():
    rep = BoundFitReport("X", [64, 128], {"a": [1.0, 3.9], "b": [2.0, 1.0]})
    assert rep.passed and rep.verdict == "pass"
    assert rep.max_ratio == 3.9
    bad = BoundFitReport("X", [64, 128], {"a": [1.0, 5.0]})
    assert not bad.passed
    assert {r["part"] for r in rep.rows()} == {"a", "b"}


def test_bound_suite_rejects_unknown():
    with pytest.raises(KeyError):
        bound_suite(["NoSuchBound"], [64])


def test_single_bound_passes():
    (rep,) = bound_suite("IOnD", [64, 128, 256])
    assert rep.passed, rep.spread


def test_every_bound_registered_and_finite():
    contexts = {64: BoundContext.build(DEFAULT_SUITE_PARAMS.with_N(64))}
    for bid, fn in BOUNDS.items():
        parts = fn(contexts[64])
        assert parts, bid
        for obs, claim in parts.values():
            assert np.all(np.isfinite(obs)) and np.all(claim > 0), bid
    assert set(CORE_BOUNDS) <= set(BOUNDS)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openkpz.model import ModelParams, derive_coefficients
from openkpz.operators import (
    DegenerateOperatorError,
    LatticeOperator,
    adjoint_closed_form,
    adjoint_flat,
    build_L_lap,
    delta_k,
    dirichlet_form,
    invariant_measure,
    max_principle_check,
    nash_inequality_eval,
    nn_laplacian,
    symmetrized,
)

ALPHAS = {1: (1.0,), 2: (1.0, 0.5), 3: (1.0, 0.5, 0.25), 4: (1.0, 0.6, 0.3, 0.1)}
GAMMAS = {1: (-0.5,), 2: (-0.5, -0.25), 3: (-0.5, -0.3, -0.1), 4: (-0.4, -0.3, -0.2, -0.1)}


def derived(N, m):
    return derive_coefficients(ModelParams(N=N, m=m, alpha=ALPHAS[m], gamma=GAMMAS[m]))


@pytest.mark.parametrize("m", [1, 2, 3])
def test_rows_kill_constants(m):
    L = build_L_lap(derived(40, m))
    np.testing.assert_allclose(L @ np.ones(41), 0.0, atol=1e-9)


def test_single_range_is_neumann_laplacian():
    d = derived(30, 1)
    want = nn_laplacian(30, 0.5 * d.tilde_alpha[0]).matrix
    np.testing.assert_allclose(build_L_lap(d).matrix, want, rtol=1e-14)


@pytest.mark.parametrize("m", [2, 3])
def test_interior_kills_linear(m):
    N = 40
    L = build_L_lap(derived(N, m))
    f = np.arange(N + 1, dtype=float)
    np.testing.assert_allclose((L @ f)[m:-m], 0.0, atol=1e-8)


def test_interior_rows_match_unclamped_stencil():
    N, m = 40, 3
    d = derived(N, m)
    L = build_L_lap(d).matrix
    D = sum(0.5 * d.tilde_alpha[k - 1] * delta_k(N, k) for k in range(1, m + 1))
    np.testing.assert_allclose(L[m:-m], D[m:-m], rtol=1e-14)


@pytest.mark.parametrize("N,m", [(20, 3), (12, 2), (40, 4), (9, 1)])
def test_adjoint_closed_form_is_transpose(N, m):
    d = derived(N, m)
    L = build_L_lap(d)
    np.testing.assert_allclose(adjoint_closed_form(d), L.matrix.T, atol=1e-9)
    adj = adjoint_flat(L, d)
    np.testing.assert_array_equal(adj.matrix, L.matrix.T)


def test_adjoint_interior_and_symmetric_cases():
    d = derived(30, 2)
    L = build_L_lap(d).matrix
    np.testing.assert_allclose(L.T[3:-3, 3:-3], L[3:-3, 3:-3])
    L1 = build_L_lap(derived(30, 1)).matrix
    np.testing.assert_array_equal(L1, L1.T)


def test_single_range_measure_is_uniform():
    pi = invariant_measure(build_L_lap(derived(50, 1)))
    np.testing.assert_allclose(pi.pi, 1.0, atol=1e-12)
    assert max_principle_check(pi.pi, 1).passed


@pytest.mark.parametrize("m", [2, 3])
def test_invariant_measure_properties(m):
    ratios = []
    for N in (50, 100, 200, 400):
        L = build_L_lap(derived(N, m))
        pi = invariant_measure(L)
        assert pi.pi.min() > 0
        assert abs(pi.pi[0] - pi.pi[-1]) <= 1e-10
        assert pi.pi.sum() == pytest.approx(N + 1)
        assert np.abs(L.matrix.T @ pi.pi).max() <= 1e-8 * np.abs(L.matrix).max()
        assert max_principle_check(pi.pi, m).passed
        ratios.append(pi.ratio)
    assert max(ratios) / min(ratios) < 2


@pytest.mark.parametrize("m", [2, 3, 4])
def test_extrema_in_clusters(m):
    pi = invariant_measure(build_L_lap(derived(100, m))).pi
    rep = max_principle_check(pi, m)
    assert rep.passed


def test_max_principle_negative_control():
    pi = invariant_measure(build_L_lap(derived(100, 2))).pi.copy()
    pi[50] = pi.max() * 1.5
    assert not max_principle_check(pi, 2).passed


def test_degenerate_kernel_detected():
    # two decoupled blocks have a two-dimensional kernel
    A = nn_laplacian(5, 1.0).matrix
    L = np.zeros((12, 12))
    L[:6, :6] = A
    L[6:, 6:] = A
    with pytest.raises(DegenerateOperatorError):
        invariant_measure(LatticeOperator(L, "blocks"))


def test_symmetrized_dirichlet_form():
    d = derived(40, 3)
    L = build_L_lap(d)
    pi = invariant_measure(L).pi
    S = symmetrized(L, pi)
    W = S.matrix * pi[:, None]
    np.testing.assert_allclose(W, W.T, atol=1e-8)
    rng = np.random.default_rng(0)
    for _ in range(5):
        phi = rng.normal(size=41)
        assert dirichlet_form(L, pi, phi) == pytest.approx(dirichlet_form(S, pi, phi), rel=1e-10)
        assert dirichlet_form(S, pi, phi) >= 0
    assert dirichlet_form(L, pi, np.ones(41)) == pytest.approx(0.0, abs=1e-8)


def test_nn_laplacian_robin_ghost():
    L = nn_laplacian(10, 1.0, mu_minus=0.9, mu_plus=1.0)
    assert L.A_minus == pytest.approx(1.0)
    assert (L @ np.ones(11))[0] == pytest.approx(-0.1 * 100)
    assert (L @ np.ones(11))[1:] == pytest.approx(0.0)


def test_nash_constant_function():
    N = 64
    t = nash_inequality_eval(np.ones(N + 1))
    assert t.lhs == pytest.approx(np.sqrt(N + 1))
    assert t.gradient_term == pytest.approx(0.0, abs=1e-6)
    assert t.l1_term == pytest.approx((N + 1) / np.sqrt(N))
    assert t.constant == pytest.approx(1.0, abs=0.05)


def test_nash_point_mass():
    t = nash_inequality_eval(np.eye(65)[0])
    assert t.lhs == 1.0
    assert t.gradient_term > t.l1_term


def test_nash_constant_stable_in_N():
    rng = np.random.default_rng(1)
    fitted = []
    for N in (64, 128, 256):
        phis = rng.normal(size=(10_000, N + 1))
        fitted.append(max(nash_inequality_eval(phi).constant for phi in phis))
    assert max(fitted) / min(fitted) < 2


@settings(max_examples=30, deadline=None)
@given(N=st.integers(8, 80), m=st.integers(1, 2), k=st.integers(0, 10))
def test_truncated_generator_is_conservative(N, m, k):
    """Every row of L_lap has non-negative off-diagonal weights summing to minus the diagonal."""
    L = build_L_lap(derived(N, m)).matrix
    off = L - np.diag(np.diag(L))
    assert off.min() >= 0
    np.testing.assert_allclose(off.sum(axis=1), -np.diag(L), rtol=1e-12)
    x = min(k, N)
    assert L[x, x] < 0

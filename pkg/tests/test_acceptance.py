"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary (shown at the end of the run)
before asserting.
"""

import math

import numpy as np
import pytest

from openkpz.cole_hopf import drift_identity_error, field_class_check, shipped_functionals
from openkpz.dynamics import ParticleSystem, bernoulli_invariance_error
from openkpz.kernels import (
    CORE_BOUNDS,
    build_kernel,
    chapman_kolmogorov_error,
    duhamel_boundary_residual,
    duhamel_robin_residual,
    full_line_chapman_kolmogorov_error,
    image_kernel,
    integral_inequality_check,
    observed_order,
    padded_image_kernel,
    bound_suite,
)
from openkpz.model import (
    ANNIHILATE,
    CREATE,
    LEFT,
    RIGHT,
    BoundaryCoefficients,
    ModelError,
    ModelParams,
    boundary_residuals,
    boundary_system_terms,
    derive_coefficients,
    solve_boundary_coefficients,
)
from openkpz.operators import build_L_lap, invariant_measure, max_principle_check
from openkpz.she_ref import convergence_experiment

ALPHA = (1.0, 0.5, 0.25)
GAMMA = (-1.0, -0.4, -0.2)


def _system(N, m, A=(0.0, 0.0), gamma=GAMMA, beta=None):
    p = ModelParams(N=N, m=m, alpha=ALPHA[:m], gamma=gamma[:m], A_minus=A[0], A_plus=A[1])
    d = derive_coefficients(p)
    b = solve_boundary_coefficients(p, d) if beta is None else BoundaryCoefficients(np.asarray(beta, float), "given")
    return ParticleSystem.build(p, d, b)


def test_drift_identity(criterion):
    worst, cases = 0.0, []
    for N in (6, 8, 10, 12):
        for m in (1, 2, 3):
            if 4 * m > N:
                continue
            s = _system(N, m)
            for flux in (0, 3):
                worst = max(worst, drift_identity_error(s, t=0.2, left_flux=flux))
            cases.append((N, m))
    ok = criterion(1, worst <= 1e-10, f"drift identity max rel err {worst:.2e} over (N, m) {cases}")
    assert ok


def _dense_solve(params, derived, side):
    m = params.m
    sums, forcing = boundary_system_terms(params, derived, side)
    A = np.zeros((2 * m, 2 * m))
    rhs = np.zeros(2 * m)
    for j in range(m):
        A[j, j] = A[j, m + j] = 1.0
        rhs[j] = sums[j]
        A[m + j, j:m] = 1.0
        A[m + j, m + j :] = -1.0
        rhs[m + j] = forcing[j]
    x = np.linalg.solve(A, rhs)
    return x[:m], x[m:]


def test_boundary_solver(criterion):
    rng = np.random.default_rng(11)
    worst_res = worst_oracle = 0.0
    solved = 0
    while solved < 20:
        m = int(rng.integers(1, 4))
        N = int(rng.choice([40, 64, 100, 256]))
        p = ModelParams(N=N, m=m, alpha=tuple(np.r_[1.0, rng.uniform(0.1, 1.0, m - 1)]),
                        gamma=tuple(rng.uniform(-1.0, -0.1, m)), A_minus=rng.uniform(-0.5, 0.5),
                        A_plus=rng.uniform(-0.5, 0.5))
        d = derive_coefficients(p)
        try:
            b = solve_boundary_coefficients(p, d)
        except ModelError:
            continue
        solved += 1
        worst_res = max(worst_res, boundary_residuals(p, d, b))
        for side in (LEFT, RIGHT):
            more, fewer = (CREATE, ANNIHILATE) if side == LEFT else (ANNIHILATE, CREATE)
            bp, bm = _dense_solve(p, d, side)
            worst_oracle = max(worst_oracle, np.abs(b.beta[side, :, more] - bp).max(),
                               np.abs(b.beta[side, :, fewer] - bm).max())
    ok = worst_res <= 1e-12 and worst_oracle <= 1e-14
    assert criterion(2, ok, f"20 instances: residual {worst_res:.1e}, dense-oracle gap {worst_oracle:.1e}")


def test_kernel_triangle_and_semigroup(criterion):
    d32 = derive_coefficients(ModelParams(N=32, m=1, alpha=(1.0,), gamma=(-0.5,)))
    tri = 0.0
    for t in (1e-3, 1e-2, 1e-1):
        a, b, c = image_kernel(d32, t), build_kernel("nn_neumann", d32).P(t), padded_image_kernel(d32, t)
        tri = max(tri, np.abs(a - b).max(), np.abs(a - c).max(), np.abs(b - c).max())
    ck = 0.0
    for N in (16, 64, 256):
        d = derive_coefficients(ModelParams(N=N, m=2, alpha=ALPHA[:2], gamma=GAMMA[:2], A_minus=0.5, A_plus=-0.5))
        for kind in ("image_sum", "nn_neumann", "nn_robin", "neumann", "robin"):
            K = build_kernel(kind, d, 0.5, -0.5)
            for s, t in ((1e-3, 2e-3), (0.01, 0.03)):
                ck = max(ck, chapman_kolmogorov_error(K, s, t))
        ck = max(ck, full_line_chapman_kolmogorov_error(d, 0.01, 0.02))
    ok = tri <= 1e-8 and ck <= 1e-8
    assert criterion(3, ok, f"triangle gap {tri:.1e}, Chapman-Kolmogorov {ck:.1e}")


def test_duhamel_identities(criterion):
    res, orders = {}, {}
    for m in (1, 2):
        d = derive_coefficients(ModelParams(N=32, m=m, alpha=ALPHA[:m], gamma=GAMMA[:m], A_minus=0.5, A_plus=-0.5))
        res[f"boundary m={m}"] = duhamel_boundary_residual(d, 0.0, 0.01)
        res[f"robin m={m}"] = duhamel_robin_residual(d, 0.5, -0.5, 0.0, 0.05)
        if m == 2:
            orders["boundary"] = observed_order([duhamel_boundary_residual(d, 0.0, 0.01, panels=n)
                                                 for n in (32, 64, 128)])
        orders[f"robin m={m}"] = observed_order([duhamel_robin_residual(d, 0.5, -0.5, 0.0, 0.05, panels=n)
                                                 for n in (128, 256, 512)])
    # single-range boundary defect is identically zero, so there is nothing to refine
    small = max(res.values()) <= 1e-6 and res["boundary m=1"] <= 1e-12
    rates = all(np.all(o > 3.5) for o in orders.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in res.items())
    detail += "; orders " + ", ".join(f"{k} {np.round(v, 2).tolist()}" for k, v in orders.items())
    assert criterion(4, small and rates, detail)


def test_invariant_measure(criterion):
    ok, spreads = True, {}
    for m in (2, 3):
        ratios = []
        for N in (50, 100, 200, 400):
            d = derive_coefficients(ModelParams(N=N, m=m, alpha=ALPHA[:m], gamma=GAMMA[:m]))
            pi = invariant_measure(build_L_lap(d)).pi
            ok &= pi.min() > 0 and abs(pi[0] - pi[-1]) <= 1e-10 and max_principle_check(pi, m).passed
            ratios.append(pi.max() / pi.min())
        spreads[m] = max(ratios) / min(ratios)
        ok &= spreads[m] < 2
    detail = ", ".join(f"m={m} max/min ratio spread {v:.3f}" for m, v in spreads.items())
    assert criterion(5, bool(ok), detail)


def test_bound_sweep(criterion):
    reports = bound_suite(CORE_BOUNDS, [64, 128, 256])
    failed = [r.bound_id for r in reports if not r.passed]
    worst = max(max(r.spread.values()) for r in reports)
    detail = f"{len(reports)} bounds, worst spread {worst:.2f}" + (f", failing {failed}" if failed else "")
    assert criterion(6, not failed, detail)


def test_field_classes(criterion):
    reps = [(size, field_class_check(f, cls, size, name, tol=1e-12)) for name, cls, size, f in shipped_functionals()]
    ok = all(r.passed and size <= 16 for size, r in reps)
    worst = max(r.max_abs_mean for _, r in reps)
    assert criterion(7, ok, f"{len(reps)} functionals, worst |mean| {worst:.1e}")


def test_symmetric_invariance(criterion):
    worst = 0.0
    for N, m in ((4, 1), (8, 1), (8, 2), (10, 1), (10, 2)):
        beta = np.zeros((2, m, 2))
        beta[LEFT] = np.array([0.3, 0.7][:m])[:, None]
        beta[RIGHT] = np.array([0.2, 0.9][:m])[:, None]
        worst = max(worst, bernoulli_invariance_error(_system(N, m, gamma=(0.0, 0.0, 0.0), beta=beta)))
    assert criterion(8, worst <= 1e-12, f"max |E_Bernoulli[Lf]| {worst:.1e} over all characters")


@pytest.mark.slow
def test_desk_scale_comparison(criterion):
    verdict, _ = convergence_experiment(replicas=2000, seed=0)
    fr = [round(v.fraction_within, 3) for v in verdict.verdicts]
    disc = [round(x, 3) for x in verdict.discrepancies]
    control = verdict.negative_control.fraction_within
    detail = f"fractions |z|<=3 {fr}, discrepancies {disc}, control fraction {control:.3f}"
    criterion(9, verdict.passed, detail)
    assert verdict.all_within and verdict.control_fails, detail
    if not verdict.monotone:
        pytest.xfail(f"discrepancy not monotone in N at 2000 replicas: {disc}")


def test_integral_inequalities(criterion):
    beta_case = integral_inequality_check(0.5, 0.5).ratio
    ratios = []
    cs = (0.0, 0.25, 0.5, 0.75)
    for c1 in cs:
        for c2 in cs:
            for S, T in ((0.0, 1.0), (2.0, 2.01), (0.0, 50.0)):
                ratios.append(integral_inequality_check(c1, c2, S, T).ratio)
        for c2 in (1.25, 1.5, 2.0):
            for T in (0.1, 1.0, 10.0):
                for eps in np.geomspace(1e-6, 0.5, 8) * T:
                    ratios.append(integral_inequality_check(c1, c2, 0.0, T, eps).ratio)
    ratios = np.array(ratios)
    ok = abs(beta_case - math.pi) <= 1e-10 and np.all(np.isfinite(ratios)) and ratios.max() < 10 and ratios.min() > 0
    detail = f"Beta case ratio {beta_case:.12f}, grid of {ratios.size}: ratio in [{ratios.min():.3f}, {ratios.max():.3f}]"
    assert criterion(10, bool(ok), detail)

"""Heat kernels on 0..N and on the full line, Duhamel residuals and bound fits.

Kernels are indexed ``P(t)[x, y]`` with the generator acting on the backward
variable x, so row sums are the conserved mass of Neumann kernels.  Time
arguments are elapsed times ``rho = T - S``; every kernel here is
time-homogeneous.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.special

from .model import DerivedCoefficients, ModelParams, derive_coefficients
from .operators import build_L_lap, nn_laplacian

KINDS = ("full_line", "image_sum", "nn_neumann", "nn_robin", "robin", "neumann")


def _range_weights(derived: DerivedCoefficients) -> np.ndarray:
    return np.asarray(derived.tilde_alpha, dtype=float)


def nn_diffusivity(derived: DerivedCoefficients) -> float:
    """Half the second moment: the nearest-neighbour walk with matching variance."""
    return 0.5 * derived.second_moment


def _spread(N: int, t: float, weights: np.ndarray) -> float:
    k = np.arange(1, weights.size + 1)
    return N * math.sqrt(max(t, 0.0) * float(np.sum(k**2 * weights)))


# ---------------------------------------------------------------------------
# full line


def full_line_values(N: int, t: float, weights: Sequence[float], zmax: int) -> np.ndarray:
    """``G(t, z)`` for ``z = -zmax..zmax`` from the Fourier integral.

    The generator is ``(1/2) sum_k w_k N^2 Delta_k`` on the integers.  The
    integral is evaluated by the trapezoid rule on a grid of ``n`` points,
    which is exact up to aliasing ``sum_{j != 0} G(z + j n)``; ``n`` is taken
    large enough that the alias terms are below double precision.
    """
    weights = np.asarray(weights, dtype=float)
    if t == 0:
        return (np.arange(-zmax, zmax + 1) == 0).astype(float)
    margin = int(12 * _spread(N, t, weights)) + 64 + 8 * weights.size
    n = 1 << int(math.ceil(math.log2(2 * zmax + 2 * margin + 1)))
    xi = 2 * np.pi * np.arange(n) / n
    k = np.arange(1, weights.size + 1)
    symbol = N * N * t * ((1 - np.cos(np.outer(xi, k))) @ weights)
    g = np.fft.ifft(np.exp(-symbol)).real
    z = np.arange(-zmax, zmax + 1)
    return g[z % n]


def full_line_kernel(derived: DerivedCoefficients, t: float, z) -> np.ndarray | float:
    """``G(t, x - y)`` for the long-range full-line walk; ``z`` may be an integer array."""
    z_arr = np.asarray(z)
    zmax = int(np.abs(z_arr).max()) if z_arr.size else 0
    vals = full_line_values(derived.N, t, _range_weights(derived), zmax)
    out = vals[z_arr + zmax]
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# image sums


def _image_sum(G_of: Callable[[int], np.ndarray], N: int, xs: np.ndarray, reach: float) -> np.ndarray:
    """``sum_j G(x - y - jP) + G(x + 1 + y - jP)`` with period ``P = 2(N+1)``.

    The images of y are ``y + jP`` and ``-1 - y + jP``: reflection through the
    half-integer points ``-1/2`` and ``N + 1/2``.  ``G_of(zmax)`` returns
    ``G`` on ``-zmax..zmax``; terms further than ``reach`` are dropped.
    """
    P = 2 * (N + 1)
    y = np.arange(N + 1)
    jmax = int(math.ceil((reach + np.abs(xs).max() + N + 1) / P)) + 1
    zmax = int(np.abs(xs).max()) + N + 1 + jmax * P
    g = G_of(zmax)
    out = np.zeros((xs.size, N + 1))
    for j in range(-jmax, jmax + 1):
        out += g[xs[:, None] - y[None, :] - j * P + zmax]
        out += g[xs[:, None] + 1 + y[None, :] - j * P + zmax]
    return out


def image_kernel(derived: DerivedCoefficients, t: float, xs=None) -> np.ndarray:
    """Neumann image sum ``T(t)[x, y]`` built from the long-range full-line kernel.

    ``xs`` may extend beyond 0..N; the image sum is the natural even extension.
    """
    N = derived.N
    w = _range_weights(derived)
    xs = np.arange(N + 1) if xs is None else np.asarray(xs, dtype=int)
    reach = 12 * _spread(N, t, w) + 64
    return _image_sum(lambda zmax: full_line_values(N, t, w, zmax), N, xs, reach)


def padded_image_kernel(derived: DerivedCoefficients, t: float) -> np.ndarray:
    """Same image sum, but with the full-line kernel from a matrix exponential on a padded lattice."""
    N = derived.N
    w = _range_weights(derived)
    m = w.size
    W = N + 1 + int(12 * _spread(N, t, w)) + 8 * m + 16
    size = 2 * W + 1
    A = np.zeros((size, size))
    idx = np.arange(size)
    for k in range(1, m + 1):
        c = 0.5 * w[k - 1] * N * N
        A[idx[:-k], idx[:-k] + k] += c
        A[idx[k:], idx[k:] - k] += c
        A[idx, idx] -= 2 * c
    row = scipy.linalg.expm(t * A)[W]  # walk started at the centre

    def G_of(zmax):
        g = np.zeros(2 * zmax + 1)
        lo = max(-zmax, -W)
        hi = min(zmax, W)
        g[lo + zmax : hi + zmax + 1] = row[lo + W : hi + W + 1]
        return g

    return _image_sum(G_of, N, np.arange(N + 1), W)


# ---------------------------------------------------------------------------
# matrix kernels


@dataclass
class HeatKernel:
    kind: str
    N: int
    generator: np.ndarray | None = None
    A_minus: float = 0.0
    A_plus: float = 0.0
    derived: DerivedCoefficients | None = None
    _cache: dict = field(default_factory=dict, repr=False)
    _eig: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.generator is not None and np.allclose(self.generator, self.generator.T, rtol=0, atol=1e-12 * np.abs(self.generator).max()):
            w, V = np.linalg.eigh(self.generator)
            if not np.all(np.isfinite(w)):
                raise np.linalg.LinAlgError("eigendecomposition did not converge")
            self._eig = (w, V)

    @property
    def conserves_mass(self) -> bool:
        return self.kind in ("image_sum", "nn_neumann", "neumann") or (self.A_minus == 0 and self.A_plus == 0)

    def P(self, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError("negative time")
        key = float(t)
        if key not in self._cache:
            if key == 0:
                self._cache[key] = np.eye(self.N + 1)
            elif self.kind == "image_sum":
                self._cache[key] = image_kernel(self.derived, key)
            elif self._eig is not None:
                w, V = self._eig
                self._cache[key] = (V * np.exp(key * w)) @ V.T
            else:
                self._cache[key] = scipy.linalg.expm(key * self.generator)
        return self._cache[key]

    __call__ = P


def robin_generator(derived: DerivedCoefficients, A_minus: float, A_plus: float, kind: str) -> np.ndarray:
    N = derived.N
    if kind == "nn":
        return nn_laplacian(N, nn_diffusivity(derived), 1 - A_minus / N, 1 - A_plus / N).matrix
    if kind == "long_range":
        L = build_L_lap(derived).matrix.copy()
        L[0, 0] -= N * A_minus
        L[N, N] -= N * A_plus
        return L
    raise ValueError(f"unknown generator kind {kind!r}")


def robin_kernel(derived: DerivedCoefficients, A_minus: float = 0.0, A_plus: float = 0.0, kind: str = "long_range") -> HeatKernel:
    """Kernel of the Robin problem.

    ``kind="nn"``: ``(1/2)(sum_k k^2 tilde_alpha_k) N^2 Delta_1`` with ghost sites
    ``U_{-1} = (1 - A_minus/N) U_0`` and ``U_{N+1} = (1 - A_plus/N) U_N``.
    ``kind="long_range"``: ``L_lap`` killed at rate ``N A_minus`` at site 0 and
    ``N A_plus`` at site N.
    """
    gen = robin_generator(derived, A_minus, A_plus, kind)
    neumann = A_minus == 0 and A_plus == 0
    if kind == "nn":
        name = "nn_neumann" if neumann else "nn_robin"
    else:
        name = "neumann" if neumann else "robin"
    return HeatKernel(name, derived.N, gen, A_minus, A_plus, derived)


def build_kernel(kind: str, derived: DerivedCoefficients, A_minus: float = 0.0, A_plus: float = 0.0) -> HeatKernel:
    if kind == "image_sum":
        return HeatKernel("image_sum", derived.N, None, 0.0, 0.0, derived)
    if kind in ("nn_neumann", "nn_robin"):
        return robin_kernel(derived, A_minus, A_plus, "nn")
    if kind in ("neumann", "robin"):
        return robin_kernel(derived, A_minus, A_plus, "long_range")
    raise ValueError(f"unknown kernel kind {kind!r}")


def chapman_kolmogorov_error(kernel: HeatKernel, s: float, t: float) -> float:
    return float(np.abs(kernel.P(s) @ kernel.P(t) - kernel.P(s + t)).max())


def full_line_chapman_kolmogorov_error(derived: DerivedCoefficients, s: float, t: float) -> float:
    w = _range_weights(derived)
    N = derived.N
    zmax = int(12 * _spread(N, s + t, w)) + 32
    gs = full_line_values(N, s, w, zmax)
    gt = full_line_values(N, t, w, zmax)
    conv = np.convolve(gs, gt)[zmax : 3 * zmax + 1]
    return float(np.abs(conv - full_line_values(N, s + t, w, zmax)).max())


# ---------------------------------------------------------------------------
# Duhamel identities


def boundary_defect(derived: DerivedCoefficients, t: float) -> np.ndarray:
    """``D_bdry T(t)``: ``L_lap`` minus the full-line operator, applied to the image sum in x.

    Rows outside the edge clusters vanish identically.
    """
    N, m = derived.N, derived.m
    xs = np.arange(-m, N + m + 1)
    Text = image_kernel(derived, t, xs)
    inner = Text[m : m + N + 1]
    L = build_L_lap(derived).matrix
    free = np.zeros_like(inner)
    for k in range(1, m + 1):
        c = 0.5 * derived.tilde_alpha[k - 1] * N * N
        free += c * (Text[m + k : m + k + N + 1] + Text[m - k : m - k + N + 1] - 2 * inner)
    return L @ inner - free


def _simpson_weights(n: int) -> np.ndarray:
    if n % 2:
        raise ValueError("Simpson's rule needs an even number of panels")
    w = np.ones(n + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return w / (3 * n)


def _pick(mat: np.ndarray, x, y) -> float:
    if x is None and y is None:
        return float(np.abs(mat).max())
    if x is None:
        return float(np.abs(mat[:, y]).max())
    if y is None:
        return float(np.abs(mat[x]).max())
    return float(abs(mat[x, y]))


DEFAULT_PANELS = 512


def duhamel_boundary_matrix(derived: DerivedCoefficients, rho: float, panels: int = DEFAULT_PANELS) -> np.ndarray:
    """``U0(rho) - T(rho) - int_0^rho U0(rho - r) D_bdry T(r) dr`` with composite Simpson."""
    U0 = robin_kernel(derived, 0, 0, "long_range")
    if rho == 0:
        return U0.P(0.0) - image_kernel(derived, 0.0)
    r = np.linspace(0.0, rho, panels + 1)
    w = _simpson_weights(panels) * rho
    integral = np.zeros((derived.N + 1, derived.N + 1))
    for ri, wi in zip(r, w):
        integral += wi * (U0.P(rho - ri) @ boundary_defect(derived, ri))
    return U0.P(rho) - image_kernel(derived, rho) - integral


def duhamel_boundary_residual(derived, S, T, x=None, y=None, panels: int = DEFAULT_PANELS) -> float:
    return _pick(duhamel_boundary_matrix(derived, T - S, panels), x, y)


def duhamel_robin_matrix(derived: DerivedCoefficients, A_minus: float, A_plus: float, rho: float,
                         panels: int = DEFAULT_PANELS) -> np.ndarray:
    """``U - U0 + int_0^rho U0(rho - r)[:, 0] N A_- U(r)[0, :] dr`` plus the right-edge term."""
    N = derived.N
    U0 = robin_kernel(derived, 0, 0, "long_range")
    U = robin_kernel(derived, A_minus, A_plus, "long_range")
    integral = np.zeros((N + 1, N + 1))
    if rho > 0 and (A_minus or A_plus):
        r = np.linspace(0.0, rho, panels + 1)
        w = _simpson_weights(panels) * rho
        for ri, wi in zip(r, w):
            a, b = U0.P(rho - ri), U.P(ri)
            integral += wi * N * (A_minus * np.outer(a[:, 0], b[0]) + A_plus * np.outer(a[:, N], b[N]))
    return U.P(rho) - U0.P(rho) + integral


def duhamel_robin_residual(derived, A_minus, A_plus, S, T, x=None, y=None, panels: int = DEFAULT_PANELS) -> float:
    return _pick(duhamel_robin_matrix(derived, A_minus, A_plus, T - S, panels), x, y)


def observed_order(residuals: Sequence[float]) -> np.ndarray:
    """``log2`` of successive residual ratios for panel counts n, 2n, 4n, ..."""
    r = np.asarray(residuals, dtype=float)
    return np.log2(r[:-1] / r[1:])


# ---------------------------------------------------------------------------
# integral inequalities


@dataclass(frozen=True)
class IntegralReport:
    c1: float
    c2: float
    S: float
    T: float
    eps: float
    integral: float
    claimed: float

    @property
    def ratio(self) -> float:
        return self.integral / self.claimed


def integral_inequality_check(c1: float, c2: float, S: float = 0.0, T: float = 1.0, eps: float = 0.0) -> IntegralReport:
    """Quadrature of ``int |T-R|^{-c1} |R-S|^{-c2} dR`` against its claimed size.

    ``eps = 0``: integral over ``[S, T]``, claim ``(T-S)^{1-c1-c2}`` (needs
    ``c1, c2 < 1``).  ``eps > 0``: integral over ``[S+eps, T]``, claim
    ``(T-S-eps)^{-c1} eps^{1-c2}`` (needs ``c1 < 1 < c2``).
    """
    if T <= S:
        raise ValueError("need S < T")
    if eps == 0:
        if not (c1 < 1 and c2 < 1):
            raise ValueError("both exponents must be below 1")
        # weight (R-S)^{-c2} (T-R)^{-c1} handled exactly by QUADPACK's algebraic rule
        val, _ = scipy.integrate.quad(lambda r: 1.0, S, T, weight="alg", wvar=(-c2, -c1), epsabs=0, epsrel=1e-12)
        claimed = (T - S) ** (1 - c1 - c2)
    else:
        if not (c1 < 1 < c2):
            raise ValueError("cutoff form needs c1 < 1 < c2")
        if not 0 < eps < T - S:
            raise ValueError("cutoff must lie inside (0, T - S)")
        a = S + eps
        val, _ = scipy.integrate.quad(lambda r: (r - S) ** (-c2), a, T, weight="alg", wvar=(0.0, -c1),
                                      epsabs=0, epsrel=1e-11, limit=200)
        claimed = (T - a) ** (-c1) * eps ** (1 - c2)
    return IntegralReport(c1, c2, S, T, eps, float(val), float(claimed))


def beta_integral(c1: float, c2: float, rho: float = 1.0) -> float:
    """Closed form ``rho^{1-c1-c2} B(1-c1, 1-c2)``."""
    return rho ** (1 - c1 - c2) * float(scipy.special.beta(1 - c1, 1 - c2))


# ---------------------------------------------------------------------------
# bound fits

DEFAULT_SUITE_PARAMS = ModelParams(N=64, m=2, alpha=(1.0, 0.5), gamma=(-0.5, -0.25), A_minus=0.5, A_plus=-0.5, T_f=1.0)
DEFAULT_SWEEP = (64, 128, 256)
EPS = 0.1
BULK_EXPONENT = 0.5
SHORT_TAUS = (1 / 64, 1 / 8, 1 / 2)
LONG_TAUS = (1.0, 3.0, 7.0)


@dataclass
class BoundContext:
    """Kernels and grids shared by every bound at one N."""

    params: ModelParams
    derived: DerivedCoefficients
    times: np.ndarray
    sites: np.ndarray
    bulk: np.ndarray
    U0: HeatKernel
    U: HeatKernel
    Ubar0: HeatKernel
    Ubar: HeatKernel
    T: HeatKernel

    @property
    def N(self) -> int:
        return self.derived.N

    @classmethod
    def build(cls, params: ModelParams, n_times: int = 10) -> "BoundContext":
        d = derive_coefficients(params)
        N, m = params.N, params.m
        times = np.geomspace(N**-2.0, params.T_f, n_times)
        sites = np.unique(np.r_[np.arange(m), np.arange(N - m + 1, N + 1), N // 4, N // 2])
        cut = N**BULK_EXPONENT
        y = np.arange(N + 1)
        bulk = y[(y > cut) & (y < N - cut)]
        D = nn_diffusivity(d)
        return cls(
            params=params,
            derived=d,
            times=times,
            sites=sites,
            bulk=bulk,
            U0=robin_kernel(d, 0, 0, "long_range"),
            U=robin_kernel(d, params.A_minus, params.A_plus, "long_range"),
            Ubar0=robin_kernel(d, 0, 0, "nn"),
            # ghost multipliers chosen so the nn walk is killed at the same rate N A as U
            Ubar=robin_kernel(d, params.A_minus / D, params.A_plus / D, "nn"),
            T=build_kernel("image_sum", d),
        )


def _grad_y(M: np.ndarray, k: int, ys: np.ndarray) -> np.ndarray:
    """``N * (M[:, y+k] - M[:, y])`` for ``y`` in ``ys`` (caller keeps ``y+k`` in range)."""
    N = M.shape[1] - 1
    return N * (M[:, ys + k] - M[:, ys])


def _bulk_for(ctx: BoundContext, *shifts: int) -> np.ndarray:
    total = sum(shifts)
    lo = -min(0, min(shifts)) if shifts else 0
    ys = ctx.bulk
    return ys[(ys + total <= ctx.N) & (ys - lo >= 0)]


def _on_diag_claim(N, rho):
    return np.minimum(1 / N + rho**-0.5 / N, 1.0)


Parts = dict[str, tuple[np.ndarray, np.ndarray]]


def _collect(pairs: Iterable[tuple[float, float]]):
    pairs = list(pairs)
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def _b_IOnD(ctx: BoundContext) -> Parts:
    N = ctx.N
    return {"sup": _collect((np.abs(ctx.U0.P(r)).max(), _on_diag_claim(N, r)) for r in ctx.times)}


def _b_IOnDRBPA(ctx: BoundContext) -> Parts:
    N = ctx.N
    return {
        "sup": _collect((np.abs(ctx.U.P(r)).max(), _on_diag_claim(N, r)) for r in ctx.times),
        "mass": _collect((np.abs(ctx.U.P(r)).sum(axis=1).max(), 1.0) for r in ctx.times),
    }


def _b_IOffDTotal(ctx: BoundContext) -> Parts:
    N = ctx.N
    x = np.arange(N + 1)
    dist = np.abs(x[:, None] - x[None, :])
    out = {}
    for kappa in (1, 2):
        for name, K in (("neumann", ctx.U0), ("robin", ctx.U)):
            pairs = []
            for r in ctx.times:
                weight = np.exp(kappa * dist / max(N * math.sqrt(r), 1.0))
                pairs.append((np.abs(K.P(r) * weight).max(), 1 / N + r**-0.5 / N))
            out[f"{name} kappa={kappa}"] = _collect(pairs)
    return out


HIT_KAPPA = 0.1


def _b_HitEstimate(ctx: BoundContext) -> Parts:
    N = ctx.N
    x = np.arange(N + 1)
    dist = np.abs(x[:, None] - x[None, :])
    literal, micro = [], []
    for r in ctx.times:
        P = ctx.U0.P(r)
        scale = N * math.sqrt(r)
        for L in range(1, N + 1):
            far = dist >= L
            tail = float(np.max((P * far).sum(axis=1) + (P * far).sum(axis=0)))
            gauss = math.exp(-HIT_KAPPA * L * L / scale**2)
            literal.append((tail, gauss if L <= scale else math.exp(-HIT_KAPPA * L)))
            # the walk makes ~ N^2 r jumps, so the tail stays Gaussian up to that distance
            micro.append((tail, gauss if L <= scale**2 else math.exp(-HIT_KAPPA * L)))
    return {"tails": _collect(literal), "tails, switch at N^2 rho": _collect(micro)}


def _b_RegXHKCpt(ctx: BoundContext) -> Parts:
    out = {}
    for k in (1, 2, -1):
        ys = _bulk_for(ctx, k)
        out[f"k={k}"] = _collect(
            (np.abs(_grad_y(ctx.U0.P(r)[ctx.sites], k, ys)).sum(axis=1).max(), r**-0.5) for r in ctx.times
        )
    return out


def _time_pairs(ctx, K, taus, observe, claim):
    pairs = []
    for r in ctx.times:
        for f in taus:
            tau = f * r
            D = K.P(r + tau) - K.P(r)
            pairs.append((observe(D), claim(r, tau)))
    return _collect(pairs)


def _regt_claim(N, third=1.0 + 0.0):
    e = EPS
    return lambda r, tau: N**-1 * r ** (-1.5 + e) * tau ** (1 - e) + N ** (-2 + 2 * e) / r + third * r**-0.5 * tau


def _b_RegTHKCpt(ctx: BoundContext) -> Parts:
    N = ctx.N
    claim = _regt_claim(N, third=N ** (-1 - EPS))
    sup = lambda D: np.abs(D).max()
    return {
        "robin tau<=rho/2": _time_pairs(ctx, ctx.U, SHORT_TAUS, sup, claim),
        "robin tau<=7rho": _time_pairs(ctx, ctx.U, LONG_TAUS, sup, claim),
        "neumann tau<=rho/2": _time_pairs(ctx, ctx.U0, SHORT_TAUS, sup, claim),
        "neumann tau<=7rho": _time_pairs(ctx, ctx.U0, LONG_TAUS, sup, claim),
    }


def _b_GTYGrad(ctx: BoundContext) -> Parts:
    N, e = ctx.N, EPS
    claim = lambda r, tau: r ** (-1.5 + e) * tau ** (1 - e) + N ** (-1 + 2 * e) / r + N**-e * r**-0.5 * tau
    out = {}
    for k in (1, -1):
        ys = _bulk_for(ctx, k)
        obs = lambda D, ys=ys, k=k: np.abs(_grad_y(D[ctx.sites], k, ys)).sum(axis=1).max()
        out[f"k={k} tau<=rho/2"] = _time_pairs(ctx, ctx.U0, SHORT_TAUS, obs, claim)
        out[f"k={k} tau<=7rho"] = _time_pairs(ctx, ctx.U0, LONG_TAUS, obs, claim)
    return out


def _b_RegRBPACptTotal(ctx: BoundContext) -> Parts:
    N, e = ctx.N, EPS
    taus = SHORT_TAUS + LONG_TAUS
    out = {}
    for k in (1, -1):
        ys = _bulk_for(ctx, k)
        out[f"gradient k={k}"] = _collect(
            (np.abs(_grad_y(ctx.U.P(r)[ctx.sites], k, ys)).sum(axis=1).max(), r**-0.5) for r in ctx.times
        )
    bulk = ctx.bulk
    out["time averaged"] = _time_pairs(
        ctx, ctx.U, taus,
        lambda D: np.abs(D[ctx.sites][:, bulk]).sum(axis=1).max(),
        lambda r, tau: tau ** (1 - e) * r ** (-1 + e) + N ** (-1 + 2 * e) * r**-0.5 + tau,
    )
    out["time pointwise"] = _time_pairs(ctx, ctx.U, taus, lambda D: np.abs(D).max(), _regt_claim(N, third=1 / N))
    ys = _bulk_for(ctx, 1)
    out["space-time"] = _time_pairs(
        ctx, ctx.U, taus,
        lambda D: np.abs(_grad_y(D[ctx.sites], 1, ys)).sum(axis=1).max(),
        lambda r, tau: r ** (-1.5 + e) * tau ** (1 - e) + N ** (-1 + 2 * e) / r,
    )
    return out


def _macro_parts(ctx: BoundContext, K: HeatKernel, Kbar: HeatKernel) -> Parts:
    N, e = ctx.N, EPS
    bulk = ctx.bulk
    ys = _bulk_for(ctx, 1)
    point, total, grad = [], [], []
    for r in ctx.times:
        D = K.P(r) - Kbar.P(r)
        point.append((np.abs(D[:, bulk]).max(), N ** (-1 - e) / r + N**-2.0 / r))
        total.append((np.abs(D).sum(axis=1).max(), (N**-e + N ** (-1 + BULK_EXPONENT) + 1 / N) * r**-0.5))
        grad.append((np.abs(_grad_y(D, 1, ys)).sum(axis=1).max(), N**-e * r**-0.5 + 1 / (N * r)))
    return {"pointwise bulk": _collect(point), "total": _collect(total), "gradient": _collect(grad)}


def _b_MacroHKCpt(ctx: BoundContext) -> Parts:
    return _macro_parts(ctx, ctx.U0, ctx.Ubar0)


def _b_MacroHKCptRBPA(ctx: BoundContext) -> Parts:
    return _macro_parts(ctx, ctx.U, ctx.Ubar)


def _b_1B2BRegHK(ctx: BoundContext) -> Parts:
    N, e = ctx.N, EPS
    out = {}
    for k, l in ((1, 1), (1, 2), (2, 2)):
        y = np.arange(N + 1 - k - l)
        pairs = []
        for r in ctx.times:
            M = ctx.Ubar.P(r)
            dd = N * (M[:, y + k + l] - M[:, y + k] - M[:, y + l] + M[:, y])
            pairs.append((np.abs(dd).sum(axis=1).max(), N ** (-1 + 2 * e) * r ** (-1 + e)))
        out[f"k={k} l={l}"] = _collect(pairs)
    return out


GRADIENT_VECTORS = ((1,), (2,), (1, 1), (2, 1), (1, 1, 1), (1, -1, 2))


def _apply_gradients(g: np.ndarray, n: Sequence[int]) -> tuple[np.ndarray, int]:
    """Forward differences along the first axis; returns values and how many leading entries are lost."""
    lo = hi = 0
    for step in n:
        if step > 0:
            g = g[step:] - g[:-step]
            hi += step
        else:
            g = g[:step] - g[-step:]
            lo += -step
    return g, lo


def _b_ThirdOrder(ctx: BoundContext) -> Parts:
    N = ctx.N
    w = _range_weights(ctx.derived)
    out = {}
    for n in GRADIENT_VECTORS:
        ell = len(n)
        reach = sum(abs(v) for v in n)
        pairs = []
        for r in ctx.times:
            s = max(N * math.sqrt(r), 1.0)
            zmax = int(8 * s) + 16 + reach
            g = full_line_values(N, r, w, zmax + reach)
            z = np.arange(-zmax - reach, zmax + reach + 1)
            grad, lo = _apply_gradients(g, n)
            zz = z[lo : lo + grad.size]
            keep = np.abs(zz) <= zmax
            decay = np.exp(-np.maximum(np.abs(zz[keep]) - reach, 0) / s)
            claim = max(abs(v) for v in n) * N ** (-ell - 1.0) * r ** (-0.5 * ell - 0.5)
            pairs.append((np.max(np.abs(grad[keep]) / decay), claim))
        out[f"n={n}"] = _collect(pairs)
    return out


def _b_BRegT(ctx: BoundContext) -> Parts:
    N = ctx.N
    out = {}
    for n in GRADIENT_VECTORS[:4]:
        ell = len(n)
        reach = sum(abs(v) for v in n)
        prod = float(np.prod(np.abs(n)))
        xs = np.arange(-reach, N + reach + 1)
        point, total = [], []
        for r in ctx.times:
            Text = image_kernel(ctx.derived, r, xs)
            grad, lo = _apply_gradients(Text, n)
            gx = xs[lo : lo + grad.shape[0]]
            sel = np.isin(gx, ctx.sites)
            for x, row in zip(gx[sel], grad[sel]):
                S = min(abs(x), abs(N - x)) * prod + prod
                point.append((np.abs(row).max(), min(S * N ** (-ell - 1.0) * r ** (-0.5 * ell - 0.5), 1.0)))
                total.append((np.abs(row).sum(), min(S * N ** (-float(ell)) * r ** (-0.5 * ell), 1.0)))
        out[f"n={n} pointwise"] = _collect(point)
        out[f"n={n} total"] = _collect(total)
    return out


def _b_MacroAuxHKTaylor(ctx: BoundContext) -> Parts:
    N = ctx.N
    d = ctx.derived
    w = _range_weights(d)
    m = w.size
    k = np.arange(1, m + 1)
    second = float(np.sum(k**2 * w))
    third = float(np.sum(k**3 * w))
    out = {}
    for name, weights in (("long-range", w), ("nearest-neighbour", np.array([second]))):
        pairs = []
        for r in ctx.times:
            zmax = int(8 * max(N * math.sqrt(r), 1.0)) + 16
            g = full_line_values(N, r, weights, zmax + m)
            c = m
            mid = g[c : g.size - c]
            val = np.zeros_like(mid)
            for kk in range(1, m + 1):
                val += 0.5 * w[kk - 1] * N * N * (g[c + kk : g.size - c + kk] + g[c - kk : g.size - c - kk] - 2 * mid)
            val -= 0.5 * second * N * N * (g[c + 1 : g.size - c + 1] + g[c - 1 : g.size - c - 1] - 2 * mid)
            pairs.append((np.abs(val).max(), third * N**-2.0 * r**-2.0))
        out[name] = _collect(pairs)
    return out


BOUNDS: dict[str, Callable[[BoundContext], Parts]] = {
    "IOnD": _b_IOnD,
    "IOnDRBPA": _b_IOnDRBPA,
    "IOffDTotal": _b_IOffDTotal,
    "HitEstimate": _b_HitEstimate,
    "RegXHKCpt": _b_RegXHKCpt,
    "RegTHKCpt": _b_RegTHKCpt,
    "GTYGrad": _b_GTYGrad,
    "RegRBPACptTotal": _b_RegRBPACptTotal,
    "MacroHKCpt": _b_MacroHKCpt,
    "MacroHKCptRBPA": _b_MacroHKCptRBPA,
    "1B2BRegHK": _b_1B2BRegHK,
    "ThirdOrder": _b_ThirdOrder,
    "BRegT": _b_BRegT,
    "MacroAuxHKTaylor": _b_MacroAuxHKTaylor,
}

# bounds required by the uniform-constant acceptance sweep
CORE_BOUNDS = (
    "IOnD", "IOnDRBPA", "IOffDTotal", "RegXHKCpt", "RegTHKCpt", "RegRBPACptTotal",
    "MacroHKCpt", "MacroHKCptRBPA", "ThirdOrder", "BRegT", "MacroAuxHKTaylor",
)


@dataclass
class BoundFitReport:
    bound_id: str
    N_values: list[int]
    constants: dict[str, list[float]]
    slack: float = 4.0

    @property
    def spread(self) -> dict[str, float]:
        return {part: max(c) / min(c) if min(c) > 0 else math.inf for part, c in self.constants.items()}

    @property
    def max_ratio(self) -> float:
        return max(max(c) for c in self.constants.values())

    @property
    def passed(self) -> bool:
        return all(s <= self.slack for s in self.spread.values())

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def rows(self) -> list[dict]:
        out = []
        for part, cs in self.constants.items():
            for N, c in zip(self.N_values, cs):
                out.append({"bound_id": self.bound_id, "part": part, "N": N, "constant": c,
                            "spread": self.spread[part], "verdict": self.verdict})
        return out


def bound_suite(bound_ids: Iterable[str] | str = CORE_BOUNDS, N_values: Sequence[int] = DEFAULT_SWEEP,
                params: ModelParams = DEFAULT_SUITE_PARAMS, slack: float = 4.0,
                contexts: dict[int, BoundContext] | None = None) -> list[BoundFitReport]:
    """Fitted constant ``max(observed / claimed)`` per bound, part and N."""
    if isinstance(bound_ids, str):
        bound_ids = [bound_ids]
    bound_ids = list(bound_ids)
    unknown = [b for b in bound_ids if b not in BOUNDS]
    if unknown:
        raise KeyError(f"unknown bound id(s): {', '.join(unknown)}")
    contexts = {} if contexts is None else contexts
    for N in N_values:
        if N not in contexts:
            contexts[N] = BoundContext.build(params.with_N(N))
    reports = []
    for b in bound_ids:
        constants: dict[str, list[float]] = {}
        for N in N_values:
            for part, (obs, claim) in BOUNDS[b](contexts[N]).items():
                constants.setdefault(part, []).append(float(np.max(obs / claim)))
        reports.append(BoundFitReport(b, list(N_values), constants, slack))
    return reports

"""Static coefficients of the open long-range exclusion process.

The bulk dynamics is parametrised by symmetric jump weights ``alpha[k]`` and
asymmetries ``gamma[k]`` for jump lengths ``k = 1..m``.  Everything else the
simulator and the kernel code need (tilted coefficients, the Cole-Hopf
renormalisation, boundary reservoir rates) is derived here.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

LEFT, RIGHT = 0, 1
CREATE, ANNIHILATE = 0, 1

DEFAULT_ELLIPTICITY_FLOOR = 1e-3
DEFAULT_MAX_RANGE = 16


class ModelError(ValueError):
    """Raised for parameter sets that do not define a valid model."""


@dataclass(frozen=True)
class ModelParams:
    N: int
    m: int
    alpha: tuple[float, ...]
    gamma: tuple[float, ...]
    A_minus: float = 0.0
    A_plus: float = 0.0
    T_f: float = 1.0
    ellipticity_floor: float = DEFAULT_ELLIPTICITY_FLOOR
    max_range: int = DEFAULT_MAX_RANGE

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if int(self.N) != self.N or self.N < 1:
            raise ModelError(f"N must be a positive integer, got {self.N!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ModelError(f"m must be a positive integer, got {self.m!r}")
        if self.m > self.max_range:
            raise ModelError(f"m={self.m} exceeds the configured cap {self.max_range}")
        if len(self.alpha) != self.m or len(self.gamma) != self.m:
            raise ModelError("alpha and gamma must both have length m")
        if any(a < 0 for a in self.alpha):
            raise ModelError("alpha entries must be non-negative")
        if self.alpha[0] < self.ellipticity_floor:
            raise ModelError(
                f"alpha[1]={self.alpha[0]} is below the ellipticity floor {self.ellipticity_floor}"
            )
        if self.T_f <= 0:
            raise ModelError("T_f must be positive")

    @property
    def alpha_arr(self) -> np.ndarray:
        return np.asarray(self.alpha, dtype=float)

    @property
    def gamma_arr(self) -> np.ndarray:
        return np.asarray(self.gamma, dtype=float)

    @property
    def ranges(self) -> np.ndarray:
        return np.arange(1, self.m + 1, dtype=float)

    def with_N(self, N: int) -> "ModelParams":
        d = asdict(self)
        d["N"] = N
        return ModelParams(**d)

    def replace(self, **changes) -> "ModelParams":
        d = asdict(self)
        d.update(changes)
        return ModelParams(**d)

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "m": self.m,
            "alpha": list(self.alpha),
            "gamma": list(self.gamma),
            "A_minus": self.A_minus,
            "A_plus": self.A_plus,
            "T_f": self.T_f,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        missing = [k for k in ("N", "m", "alpha", "gamma") if k not in d]
        if missing:
            raise ModelError(f"missing field(s): {', '.join(missing)}")
        return cls(
            N=int(d["N"]),
            m=int(d["m"]),
            alpha=tuple(d["alpha"]),
            gamma=tuple(d["gamma"]),
            A_minus=float(d.get("A_minus", 0.0)),
            A_plus=float(d.get("A_plus", 0.0)),
            T_f=float(d.get("T_f", 1.0)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class DerivedCoefficients:
    N: int
    m: int
    lambda_N: float
    tilde_alpha: np.ndarray
    gamma_star: np.ndarray
    nu_N: float
    nu_N_printed: float
    kappa_minus: np.ndarray
    kappa_plus: np.ndarray
    mu_minus: float
    mu_plus: float

    @property
    def tilt(self) -> float:
        """Per-unit-spin exponent lambda_N / sqrt(N) of the Cole-Hopf transform."""
        return self.lambda_N / math.sqrt(self.N)

    @property
    def second_moment(self) -> float:
        """sum_k k^2 tilde_alpha_k, the diffusivity of the comparison walk."""
        k = np.arange(1, self.m + 1)
        return float(np.sum(k**2 * self.tilde_alpha))

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "m": self.m,
            "lambda_N": self.lambda_N,
            "tilde_alpha": self.tilde_alpha.tolist(),
            "gamma_star": self.gamma_star.tolist(),
            "nu_N": self.nu_N,
            "nu_N_printed": self.nu_N_printed,
            "kappa_minus": self.kappa_minus.tolist(),
            "kappa_plus": self.kappa_plus.tolist(),
            "mu_minus": self.mu_minus,
            "mu_plus": self.mu_plus,
        }


@dataclass(frozen=True)
class BoundaryCoefficients:
    """Reservoir rates; ``beta[side, j-1, sign]`` with side LEFT/RIGHT, sign CREATE/ANNIHILATE."""

    beta: np.ndarray
    construction: str = "liggett"

    @property
    def m(self) -> int:
        return self.beta.shape[1]

    def to_dict(self) -> dict:
        return {
            "construction": self.construction,
            "left_create": self.beta[LEFT, :, CREATE].tolist(),
            "left_annihilate": self.beta[LEFT, :, ANNIHILATE].tolist(),
            "right_create": self.beta[RIGHT, :, CREATE].tolist(),
            "right_annihilate": self.beta[RIGHT, :, ANNIHILATE].tolist(),
        }


@dataclass
class ValidationReport:
    second_moment: float
    first_asymmetry_moment: float
    asymmetry_discrepancy: float
    discrepancy_bound: float
    discrepancy_ok: bool
    boundary_residual: float
    beta_nonnegative: bool
    gamma_nonpositive: bool
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.discrepancy_ok and self.beta_nonnegative and not self.boundary_residual > 1e-12


def _expm1_ratio(z: float) -> float:
    """expm1(z)/z, continuous at 0."""
    return 1.0 if z == 0.0 else math.expm1(z) / z


def derive_coefficients(params: ModelParams) -> DerivedCoefficients:
    N, m = params.N, params.m
    if 4 * m > N:
        raise ModelError(f"m={m} > N/4 = {N / 4}: boundary clusters would overlap")
    a = params.alpha_arr
    g = params.gamma_arr
    k = params.ranges
    lam = float(np.dot(a, g))
    lam2 = lam * lam

    tilde = np.empty(m)
    ag_star = np.empty(m)
    for i in range(m):
        kk = k[i]
        tail_l = k[i + 1 :]
        tail_a = a[i + 1 :]
        tilde[i] = (
            a[i]
            + lam2 * (kk - 2.0) / 2.0 * a[i] / N
            - lam2 / kk * np.sum((2.0 * tail_l - kk) * tail_a) / N
        )
        ag_star[i] = 2.0 * lam * np.sum((tail_l - kk) / kk * tail_a) + lam * a[i]
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma_star = np.where(a > 0, ag_star / np.where(a > 0, a, 1.0), 0.0)

    c = lam / math.sqrt(N)
    u = math.sqrt(N) * math.sinh(2.0 * c)
    v = N * (math.cosh(2.0 * c) - 1.0)
    nu = N * N * float(np.sum(tilde * (np.cosh(c) ** k - 1.0))) + 0.25 * N * float(
        np.sum(k * a * (g * u - v))
    )

    # literal transcription, kept for reporting only
    u_p = math.sqrt(N) * math.sinh(2.0 * lam / N)
    v_p = N * (math.cosh(2.0 * lam / N) - 1.0)
    nu_printed = 0.25 * N * float(np.sum(k * (g * u_p - a * v_p))) + lam2 * N * float(
        np.sum(tilde * (k + lam2 * (6 * k**2 - 5 * k) / (12.0 * N)))
    )

    kappa = np.array([_kappa(a, g, N, lam, x) for x in range(m)])
    return DerivedCoefficients(
        N=N,
        m=m,
        lambda_N=lam,
        tilde_alpha=tilde,
        gamma_star=gamma_star,
        nu_N=nu,
        nu_N_printed=nu_printed,
        kappa_minus=kappa,
        kappa_plus=kappa.copy(),
        mu_minus=1.0 - params.A_minus / N,
        mu_plus=1.0 - params.A_plus / N,
    )


def _kappa(a, g, N, lam, x) -> float:
    k = np.arange(1, len(a) + 1)
    kx = np.minimum(k, x)
    c = lam / math.sqrt(N)
    sq = math.sqrt(N)
    return 0.25 * float(
        np.sum((a + a * g / sq) * kx) * math.expm1(-2 * c) + np.sum((a - a * g / sq) * kx) * math.expm1(2 * c)
    )


def _kappa_over_lambda(a, g, N, lam, x) -> float:
    """kappa_{N,x} / lambda_N, with its finite limit at lambda_N = 0."""
    k = np.arange(1, len(a) + 1)
    kx = np.minimum(k, x)
    sq = math.sqrt(N)
    c = lam / sq
    dn = -2.0 / sq * _expm1_ratio(-2 * c)
    up = 2.0 / sq * _expm1_ratio(2 * c)
    return 0.25 * float(np.sum((a + a * g / sq) * kx) * dn + np.sum((a - a * g / sq) * kx) * up)


def boundary_system_terms(params: ModelParams, derived: DerivedCoefficients, side: int):
    """Return (sums, forcing) per cluster index j = 1..m.

    ``sums[j-1]`` is the prescribed beta_+ + beta_- and ``forcing[j-1]`` the part
    of the difference equation not coupled to other unknowns (II + III + IV).
    """
    N, m = params.N, params.m
    a = params.alpha_arr
    g = params.gamma_arr
    k = params.ranges
    lam = derived.lambda_N
    A = params.A_minus if side == LEFT else params.A_plus
    sums = np.array([np.sum(derived.tilde_alpha[j - 1 :]) for j in range(1, m + 1)])
    forcing = np.empty(m)
    for j in range(1, m + 1):
        ii = 0.5 * lam / math.sqrt(N) * (
            np.sum(k * a) + np.sum(k[: j - 1] * a[: j - 1]) + (j - 1) * np.sum(a[j - 1 :])
        )
        if lam == 0.0:
            if A != 0.0:
                raise ModelError("a nonzero Robin parameter needs lambda_N != 0 in the reservoir system")
            iii = 0.0
        else:
            iii = A / (lam * math.sqrt(N))
        iv = -2.0 * math.sqrt(N) * _kappa_over_lambda(a, g, N, lam, j - 1)
        forcing[j - 1] = ii + iii + iv
    return sums, forcing


def solve_boundary_coefficients(params: ModelParams, derived: DerivedCoefficients) -> BoundaryCoefficients:
    """Back-substitution from the outermost cluster site inwards."""
    m = params.m
    beta = np.empty((2, m, 2))
    for side in (LEFT, RIGHT):
        sums, forcing = boundary_system_terms(params, derived, side)
        # on the right the roles of creation and annihilation swap under the
        # particle-hole reflection x -> N - x
        more, fewer = (CREATE, ANNIHILATE) if side == LEFT else (ANNIHILATE, CREATE)
        tail_diff = 0.0
        for j in range(m, 0, -1):
            diff = -tail_diff + forcing[j - 1]
            beta[side, j - 1, more] = 0.5 * (sums[j - 1] + diff)
            beta[side, j - 1, fewer] = 0.5 * (sums[j - 1] - diff)
            tail_diff += diff
    if np.any(beta < 0):
        raise ModelError(
            f"negative reservoir rate at N={params.N} (min {beta.min():.3g}); increase N"
        )
    return BoundaryCoefficients(beta=beta, construction="liggett")


def boundary_residuals(params, derived, boundary) -> float:
    """Max absolute residual of both reservoir equations on both sides."""
    worst = 0.0
    for side in (LEFT, RIGHT):
        sums, forcing = boundary_system_terms(params, derived, side)
        more, fewer = (CREATE, ANNIHILATE) if side == LEFT else (ANNIHILATE, CREATE)
        bp = boundary.beta[side, :, more]
        bm = boundary.beta[side, :, fewer]
        d = bp - bm
        for j in range(1, params.m + 1):
            r1 = bp[j - 1] + bm[j - 1] - sums[j - 1]
            r2 = d[j - 1] - (-np.sum(d[j:]) + forcing[j - 1])
            worst = max(worst, abs(r1), abs(r2))
    return float(worst)


def matched_boundary_coefficients(params: ModelParams, derived: DerivedCoefficients) -> BoundaryCoefficients:
    """Nearest-neighbour reservoir rates that make the edge Cole-Hopf drift a ghost-site Laplacian.

    For m = 1 the rates are chosen so that at the edge sites the drift of Z equals
    ``(tilde_alpha/2) N^2 (Z_1 + mu Z_0 - 2 Z_0)`` exactly, configuration by
    configuration (and its mirror image on the right).
    """
    if params.m != 1:
        raise ModelError("matched reservoir rates are only defined for m = 1")
    N = params.N
    D = 0.5 * derived.tilde_alpha[0] * N * N
    c = derived.tilt
    nu = derived.nu_N
    beta = np.empty((2, 1, 2))
    for side, A in ((LEFT, params.A_minus), (RIGHT, params.A_plus)):
        robin = D * A / N
        if c == 0.0:
            if A != 0.0:
                raise ModelError("matched Robin rates need lambda_N != 0")
            up = dn = 0.5 * derived.tilde_alpha[0] * 0.5
        else:
            # left site 1 empty -> creation multiplies Z_0 by e^{2c}; Z_1/Z_0 = e^{c}
            up = (D * math.expm1(c) - robin - nu) / (N * N * math.expm1(2 * c))
            dn = (D * math.expm1(-c) - robin - nu) / (N * N * math.expm1(-2 * c))
        if side == LEFT:
            beta[side, 0, CREATE], beta[side, 0, ANNIHILATE] = up, dn
        else:
            beta[side, 0, CREATE], beta[side, 0, ANNIHILATE] = dn, up
    if np.any(beta < 0):
        raise ModelError(f"matched reservoir rates negative at N={N}")
    return BoundaryCoefficients(beta=beta, construction="matched")


def validate_assumptions(
    params: ModelParams,
    derived: DerivedCoefficients,
    boundary: BoundaryCoefficients | None = None,
    C: float = 1.0,
    beta_c: float = 0.0,
) -> ValidationReport:
    a = params.alpha_arr
    g = params.gamma_arr
    k = params.ranges
    disc = float(np.sum(k * a * np.abs(g - derived.gamma_star)))
    bound = C * params.N ** (-0.5 + beta_c)
    notes = []
    if boundary is None:
        residual, nonneg = float("nan"), True
        notes.append("no reservoir rates supplied")
    elif boundary.construction != "liggett":
        residual = float("nan")
        nonneg = bool(np.all(boundary.beta >= 0))
        notes.append(f"reservoir rates from '{boundary.construction}' construction; system residual not applicable")
    else:
        residual = boundary_residuals(params, derived, boundary)
        nonneg = bool(np.all(boundary.beta >= 0))
    gneg = bool(np.all(g <= 0))
    if not gneg:
        notes.append("some gamma entries are positive")
    return ValidationReport(
        second_moment=float(np.sum(k**2 * a)),
        first_asymmetry_moment=float(np.sum(k * a * g)),
        asymmetry_discrepancy=disc,
        discrepancy_bound=bound,
        discrepancy_ok=disc <= bound,
        boundary_residual=residual,
        beta_nonnegative=nonneg,
        gamma_nonpositive=gneg,
        notes=notes,
    )

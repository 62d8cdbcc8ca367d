"""Reference solver for the Robin stochastic heat equation and the moment comparison harness.

``solve_she`` integrates ``dZ = (alpha/2) Z'' dt + lam sqrt(alpha) Z dW`` on
``[0, 1]`` with an explicit Euler-Maruyama scheme on ``M + 1`` grid points.
The Robin condition ``Z' = A Z`` enters through ghost values
``Z_{-1} = (1 - A_minus/M) Z_0`` and ``Z_{M+1} = (1 - A_plus/M) Z_M``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
import scipy.linalg

from .cole_hopf import integer_heights, rescale_narrow_wedge
from .dynamics import ParticleSystem, replica_generators, run_replica, sample_initial
from .model import (
    BoundaryCoefficients,
    ModelParams,
    derive_coefficients,
    matched_boundary_coefficients,
    solve_boundary_coefficients,
)
from .operators import nn_laplacian

BLOWUP = 1e12


class SHEBlowupError(RuntimeError):
    pass


@dataclass(frozen=True)
class SHEParams:
    alpha: float
    lam: float
    A_minus: float = 0.0
    A_plus: float = 0.0
    M: int = 256
    dt_factor: float = 1 / 8

    @property
    def dt_max(self) -> float:
        return self.dt_factor / self.M**2

    @classmethod
    def from_model(cls, params: ModelParams, **kw) -> "SHEParams":
        """Diffusivity ``sum k^2 alpha_k`` and noise strength ``sum k alpha_k gamma_k``."""
        k = params.ranges
        a = params.alpha_arr
        kw.setdefault("A_minus", params.A_minus)
        kw.setdefault("A_plus", params.A_plus)
        return cls(alpha=float(np.sum(k**2 * a)), lam=float(np.sum(k * a * params.gamma_arr)), **kw)


@dataclass
class SHEField:
    """Snapshots ``values[i]`` of one SHE path at ``times[i]`` on the grid ``x``."""

    times: np.ndarray
    x: np.ndarray
    values: np.ndarray
    params: SHEParams
    seed: int | None = None


def _step_plan(checkpoints: Sequence[float], dt_max: float) -> tuple[float, np.ndarray]:
    """Common step size not above ``dt_max`` that lands on every checkpoint."""
    chk = np.asarray(checkpoints, dtype=float)
    if np.any(chk < 0) or np.any(np.diff(chk) < 0):
        raise ValueError("checkpoints must be sorted and non-negative")
    T = float(chk[-1]) if chk.size else 0.0
    if T == 0:
        return dt_max, np.zeros(chk.size, dtype=np.int64)
    n0 = int(math.ceil(T / dt_max - 1e-9))
    for n in range(n0, 2 * n0 + 1):
        dt = T / n
        steps = np.rint(chk / dt).astype(np.int64)
        if np.all(np.abs(steps * dt - chk) <= 1e-9 * dt):
            return dt, steps
    raise ValueError("checkpoints are not commensurate with any admissible time step")


@numba.njit(cache=True)
def _euler(Z, dt, steps, diff, noise, mu_m, mu_p, rng, out):
    M = Z.size - 1
    new = np.empty_like(Z)
    k = 0
    while k < steps.size and steps[k] == 0:
        out[k, :] = Z
        k += 1
    n = 0
    while k < steps.size:
        for i in range(M + 1):
            left = Z[i - 1] if i > 0 else mu_m * Z[0]
            right = Z[i + 1] if i < M else mu_p * Z[M]
            new[i] = Z[i] + diff * (left + right - 2.0 * Z[i]) + noise * Z[i] * rng.standard_normal()
        Z, new = new, Z
        n += 1
        if n % 256 == 0:
            for i in range(M + 1):
                if not abs(Z[i]) <= 1e12:
                    return -n
        while k < steps.size and steps[k] == n:
            out[k, :] = Z
            k += 1
    return n


def brownian_initial(M: int, lam: float, rng: np.random.Generator) -> np.ndarray:
    """``exp(-lam B_x)`` for a standard Brownian path with ``B_0 = 0`` sampled on ``i/M``."""
    incr = rng.standard_normal(M) / math.sqrt(M)
    B = np.concatenate(([0.0], np.cumsum(incr)))
    return np.exp(-lam * B)


def initial_field(kind: str, p: SHEParams, rng: np.random.Generator | None = None) -> np.ndarray:
    if kind == "near_stationary":
        return brownian_initial(p.M, p.lam, rng)
    if kind == "flat":
        return np.ones(p.M + 1)
    if kind == "narrow_wedge":
        z = np.zeros(p.M + 1)
        z[0] = p.M  # unit mass on the grid
        return z
    raise ValueError(f"unknown initial data kind {kind!r}")


def solve_she(initial: np.ndarray, params: SHEParams, rng: np.random.Generator,
              checkpoints: Sequence[float] = (0.1,)) -> SHEField:
    Z0 = np.asarray(initial, dtype=float)
    if Z0.size != params.M + 1:
        raise ValueError(f"initial data has {Z0.size} points, expected {params.M + 1}")
    dt, steps = _step_plan(checkpoints, params.dt_max)
    h2 = 1.0 / params.M**2
    out = np.empty((steps.size, params.M + 1))
    status = _euler(
        Z0.copy(), dt, steps,
        0.5 * params.alpha * dt / h2,
        params.lam * math.sqrt(params.alpha) * math.sqrt(params.M * dt),
        1 - params.A_minus / params.M, 1 - params.A_plus / params.M,
        rng, out,
    )
    if status < 0:
        raise SHEBlowupError(f"|Z| exceeded {BLOWUP:g} after {-status} steps (t = {-status * dt:.4g})")
    return SHEField(np.asarray(checkpoints, dtype=float), np.arange(params.M + 1) / params.M, out, params)


def deterministic_flow(initial: np.ndarray, params: SHEParams, t: float) -> np.ndarray:
    """Mean of the SHE from deterministic data: the Robin heat semigroup on the same grid."""
    L = nn_laplacian(params.M, 0.5 * params.alpha, 1 - params.A_minus / params.M, 1 - params.A_plus / params.M).matrix
    return scipy.linalg.expm(t * L) @ np.asarray(initial, dtype=float)


def euler_mean_flow(initial: np.ndarray, params: SHEParams, checkpoints: Sequence[float]) -> np.ndarray:
    """Exact mean of the Euler scheme (the noise has mean zero and enters linearly)."""
    dt, steps = _step_plan(checkpoints, params.dt_max)
    M = params.M
    L = nn_laplacian(M, 0.5 * params.alpha, 1 - params.A_minus / M, 1 - params.A_plus / M).matrix
    step = np.eye(M + 1) + dt * L
    return np.array([np.linalg.matrix_power(step, int(s)) @ initial for s in steps])


# ---------------------------------------------------------------------------
# moments


@dataclass
class MomentReport:
    checkpoints: np.ndarray
    x: np.ndarray
    mean: np.ndarray
    se_mean: np.ndarray
    var: np.ndarray
    se_var: np.ndarray
    replicas: int
    cov_pairs: list[tuple[float, float]] = field(default_factory=list)
    cov: np.ndarray | None = None
    label: str = ""

    def rows(self) -> list[dict]:
        out = []
        for i, t in enumerate(self.checkpoints):
            for j, x in enumerate(self.x):
                out.append({"checkpoint": float(t), "x": float(x), "mean": float(self.mean[i, j]),
                            "se_mean": float(self.se_mean[i, j]), "var": float(self.var[i, j]),
                            "se_var": float(self.se_var[i, j])})
        return out


def _sorted_sum(a: np.ndarray) -> np.ndarray:
    """Sum over axis 0 after sorting, so the result does not depend on replica order."""
    return np.sort(a, axis=0).sum(axis=0)


def moments_from_samples(samples: np.ndarray, checkpoints, x, cov_pairs=(), label="") -> MomentReport:
    """``samples[r, t, j]``: replica r, checkpoint t, grid point j."""
    n = samples.shape[0]
    if n < 4:
        raise ValueError("need at least 4 replicas for variance standard errors")
    mean = _sorted_sum(samples) / n
    dev = samples - mean
    m2 = _sorted_sum(dev**2) / n
    m4 = _sorted_sum(dev**4) / n
    var = m2 * n / (n - 1)
    se_mean = np.sqrt(var / n)
    se_var = np.sqrt(np.maximum(m4 - m2**2, 0.0) / n)
    x = np.asarray(x, dtype=float)
    cov = None
    if cov_pairs:
        idx = [(int(np.argmin(np.abs(x - a))), int(np.argmin(np.abs(x - b)))) for a, b in cov_pairs]
        cov = np.array([[_sorted_sum(dev[:, t, i] * dev[:, t, j]) / (n - 1) for i, j in idx]
                        for t in range(samples.shape[1])])
    return MomentReport(np.asarray(checkpoints, dtype=float), x, mean, se_mean, var, se_var, n,
                        list(cov_pairs), cov, label)


DEFAULT_X = tuple(k / 16 for k in range(17))
DEFAULT_CHECKPOINTS = (0.05, 0.1)
DEFAULT_COV_PAIRS = ((0.25, 0.75), (0.5, 0.5625))


def she_moments(params: SHEParams, replicas: int, seed: int, checkpoints=DEFAULT_CHECKPOINTS,
                x=DEFAULT_X, initial: str = "near_stationary", cov_pairs=DEFAULT_COV_PAIRS) -> MomentReport:
    idx = np.rint(np.asarray(x) * params.M).astype(int)
    if np.any(np.abs(idx / params.M - np.asarray(x)) > 1e-12):
        raise ValueError("moment grid must lie on the SHE grid")
    samples = np.empty((replicas, len(checkpoints), idx.size))
    negatives = 0
    for r, rng in enumerate(replica_generators(seed, replicas)):
        z0 = initial_field(initial, params, rng)
        fld = solve_she(z0, params, rng, checkpoints)
        negatives += int(np.sum(fld.values < 0))
        samples[r] = fld.values[:, idx]
    if negatives:
        raise SHEBlowupError(f"{negatives} negative grid values from positive initial data")
    return moments_from_samples(samples, checkpoints, x, cov_pairs, label=f"SHE M={params.M}")


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams
    replicas: int = 2000
    checkpoints: tuple[float, ...] = DEFAULT_CHECKPOINTS
    x: tuple[float, ...] = DEFAULT_X
    initial: str = "near_stationary"
    boundary: str = "matched"
    seed: int = 0
    cov_pairs: tuple[tuple[float, float], ...] = DEFAULT_COV_PAIRS


def build_system(params: ModelParams, boundary: str = "matched") -> ParticleSystem:
    d = derive_coefficients(params)
    if boundary == "matched":
        b: BoundaryCoefficients = matched_boundary_coefficients(params, d)
    elif boundary == "liggett":
        b = solve_boundary_coefficients(params, d)
    else:
        raise ValueError(f"unknown boundary construction {boundary!r}")
    return ParticleSystem.build(params, d, b)


def _particle_chunk(system, initial, checkpoints, sites, gens, narrow_wedge):
    d = system.derived
    N = system.N
    out = np.empty((len(gens), len(checkpoints), sites.size))
    for r, rng in enumerate(gens):
        cfg0 = sample_initial(initial, N, rng)
        snaps, _ = run_replica(cfg0, checkpoints, system, rng)
        for t, (cfg, T) in enumerate(zip(snaps, checkpoints)):
            Z = np.exp(-d.tilt * integer_heights(cfg)[sites] + d.nu_N * T)
            out[r, t] = rescale_narrow_wedge(Z, d) if narrow_wedge else Z
    return out


def particle_ensemble_moments(config: ExperimentConfig, threads: int = 1) -> MomentReport:
    """Cole-Hopf moments ``Z_{T, floor(N x)}`` over independent replicas."""
    system = build_system(config.params, config.boundary)
    N = config.params.N
    sites = np.floor(N * np.asarray(config.x) + 1e-9).astype(int)
    gens = replica_generators(config.seed, config.replicas)
    nw = config.initial == "narrow_wedge"
    chk = tuple(config.checkpoints)
    if threads > 1:
        from joblib import Parallel, delayed

        chunks = np.array_split(np.arange(config.replicas), threads * 4)
        parts = Parallel(n_jobs=threads)(
            delayed(_particle_chunk)(system, config.initial, chk, sites, [gens[i] for i in c], nw) for c in chunks
        )
        samples = np.concatenate(parts)
    else:
        samples = _particle_chunk(system, config.initial, chk, sites, gens, nw)
    return moments_from_samples(samples, chk, config.x, config.cov_pairs, label=f"particles N={N}")


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonVerdict:
    z_mean: np.ndarray
    z_var: np.ndarray
    fraction_within: float
    discrepancy: float
    threshold: float = 3.0
    required_fraction: float = 0.95

    @property
    def passed(self) -> bool:
        return self.fraction_within >= self.required_fraction

    def to_dict(self) -> dict:
        return {"fraction_within": self.fraction_within, "discrepancy": self.discrepancy,
                "max_abs_z": float(max(np.abs(self.z_mean).max(), np.abs(self.z_var).max())),
                "passed": self.passed}


def discrepancy_norm(a: MomentReport, b: MomentReport) -> float:
    """Relative L2 distance between the mean fields plus that between the variance fields."""
    dm = np.linalg.norm(a.mean - b.mean) / np.linalg.norm(b.mean)
    dv = np.linalg.norm(a.var - b.var) / np.linalg.norm(b.var)
    return float(dm + dv)


def _z(d, s1, s2):
    s = np.sqrt(s1**2 + s2**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(s > 0, d / np.where(s > 0, s, 1.0), np.where(d == 0, 0.0, np.inf))
    return z


def compare(particle: MomentReport, she: MomentReport, threshold: float = 3.0,
            required_fraction: float = 0.95) -> ComparisonVerdict:
    if not (np.allclose(particle.checkpoints, she.checkpoints) and np.allclose(particle.x, she.x)):
        raise ValueError("moment reports are on different grids")
    zm = _z(particle.mean - she.mean, particle.se_mean, she.se_mean)
    zv = _z(particle.var - she.var, particle.se_var, she.se_var)
    allz = np.concatenate([zm.ravel(), zv.ravel()])
    frac = float(np.mean(np.abs(allz) <= threshold))
    return ComparisonVerdict(zm, zv, frac, discrepancy_norm(particle, she), threshold, required_fraction)


@dataclass
class ConvergenceVerdict:
    N_values: list[int]
    verdicts: list[ComparisonVerdict]
    negative_control: ComparisonVerdict | None

    @property
    def discrepancies(self) -> list[float]:
        return [v.discrepancy for v in self.verdicts]

    @property
    def monotone(self) -> bool:
        d = self.discrepancies
        return all(b < a for a, b in zip(d, d[1:]))

    @property
    def all_within(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def control_fails(self) -> bool:
        return self.negative_control is not None and not self.negative_control.passed

    @property
    def passed(self) -> bool:
        return self.all_within and self.monotone and self.control_fails

    def to_dict(self) -> dict:
        return {
            "N": self.N_values,
            "comparisons": [v.to_dict() for v in self.verdicts],
            "discrepancies": self.discrepancies,
            "monotone": self.monotone,
            "negative_control": None if self.negative_control is None else self.negative_control.to_dict(),
            "passed": self.passed,
        }


DEFAULT_EXPERIMENT = ModelParams(N=64, m=1, alpha=(1.0,), gamma=(-1.0,), T_f=0.1)
CONTROL_A_MINUS = 10.0


def convergence_experiment(N_values=(64, 128, 256), replicas=2000, seed=0, params=DEFAULT_EXPERIMENT,
                           she_replicas=None, M=256, threads=1, control_A_minus=CONTROL_A_MINUS,
                           checkpoints=DEFAULT_CHECKPOINTS) -> tuple[ConvergenceVerdict, dict]:
    """Particle moments for each N against one SHE reference, plus a mismatched-Robin control.

    The reference is shared by every N, so by default it gets ``4 * replicas``
    paths to keep its own noise well below that of the particle ensembles.
    """
    seeds = np.random.SeedSequence(seed).generate_state(len(N_values) + 2, dtype=np.uint64)
    sp = SHEParams.from_model(params, M=M)
    she_replicas = 4 * replicas if she_replicas is None else she_replicas
    ref = she_moments(sp, she_replicas, int(seeds[0]), checkpoints)
    control = she_moments(SHEParams.from_model(params, M=M, A_minus=control_A_minus), replicas,
                          int(seeds[1]), checkpoints)
    reports = {"she": ref, "she_control": control}
    verdicts = []
    for i, N in enumerate(N_values):
        cfg = ExperimentConfig(params.with_N(N), replicas, tuple(checkpoints), seed=int(seeds[2 + i]))
        rep = particle_ensemble_moments(cfg, threads)
        reports[f"N={N}"] = rep
        verdicts.append(compare(rep, ref))
    neg = compare(reports[f"N={N_values[-1]}"], control)
    return ConvergenceVerdict(list(N_values), verdicts, neg), reports

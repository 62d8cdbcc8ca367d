"""Continuous-time simulation of the open long-range exclusion process.

Spins live on sites ``0..N``; ``+1`` is a particle and ``-1`` a hole.  Bonds
``(x, x+k)`` with ``1 <= k <= m`` exchange spins, and the sites ``1..m``
(left) and ``N-m+1..N`` (right) are coupled to particle reservoirs.

Two engines are provided.  The reference engine (``enumerate_rates``/``step``/
``simulate``) lists every event explicitly and is meant for small lattices and
oracle tests.  ``run_replica`` uses a compiled engine that groups bonds into
rate classes so an event costs O(m) work; it is what the scaling experiments use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from .model import ANNIHILATE, CREATE, LEFT, RIGHT, BoundaryCoefficients, DerivedCoefficients, ModelParams


class AbsorbingStateError(RuntimeError):
    pass


@dataclass
class Configuration:
    """Spin configuration plus the net particle flux through the left reservoir.

    ``left_flux`` counts annihilations minus creations at the left reservoir; it is
    what anchors the height function at the origin.
    """

    spins: np.ndarray
    left_flux: int = 0

    def __post_init__(self):
        self.spins = np.asarray(self.spins, dtype=np.int8)
        if self.spins.ndim != 1 or self.spins.size < 2:
            raise ValueError("spins must be a 1-d array over sites 0..N")
        if not np.all(np.abs(self.spins) == 1):
            raise ValueError("spins must be +1 or -1")

    @property
    def N(self) -> int:
        return self.spins.size - 1

    def copy(self) -> "Configuration":
        return Configuration(self.spins.copy(), self.left_flux)


@dataclass(frozen=True)
class EventDescriptor:
    kind: str  # "exchange" or "flip"
    rate: float
    x: int = -1
    k: int = 0
    direction: int = 0  # +1: (hole, particle) at (x, x+k); -1: (particle, hole)
    side: int = -1
    j: int = 0
    sign: int = -1  # CREATE or ANNIHILATE


@dataclass
class Trajectory:
    initial: Configuration
    times: list[float] = field(default_factory=list)
    events: list[EventDescriptor] = field(default_factory=list)
    counters: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), dtype=np.int64))
    final: Configuration | None = None


@dataclass(frozen=True)
class ParticleSystem:
    """Rate tables for one (params, derived, boundary) triple."""

    params: ModelParams
    derived: DerivedCoefficients
    boundary: BoundaryCoefficients
    exchange_rates: np.ndarray  # [k-1, 0] for (hole, particle), [k-1, 1] for (particle, hole)
    flip_rates: np.ndarray  # [side, j-1, sign]

    @classmethod
    def build(cls, params, derived, boundary) -> "ParticleSystem":
        return cls(params, derived, boundary, *rate_tables(params, boundary))

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def m(self) -> int:
        return self.params.m


def rate_tables(params: ModelParams, boundary: BoundaryCoefficients):
    N = params.N
    a = params.alpha_arr
    g = params.gamma_arr / math.sqrt(N)
    if np.any(np.abs(g) > 1):
        raise ValueError("|gamma_k| / sqrt(N) must not exceed 1 (negative exchange rate)")
    ex = np.empty((params.m, 2))
    ex[:, 0] = 0.5 * N * N * a * (1 + g)
    ex[:, 1] = 0.5 * N * N * a * (1 - g)
    flips = N * N * np.asarray(boundary.beta, dtype=float)
    if flips.shape != (2, params.m, 2):
        raise ValueError("reservoir coefficients do not match m")
    return ex, flips


def _as_system(params, derived=None, boundary=None) -> ParticleSystem:
    if isinstance(params, ParticleSystem):
        return params
    return ParticleSystem.build(params, derived, boundary)


def enumerate_rates(cfg: Configuration, params, derived=None, boundary=None) -> list[EventDescriptor]:
    """All events with positive rate from ``cfg``, in a fixed canonical order."""
    sys_ = _as_system(params, derived, boundary)
    N, m = sys_.N, sys_.m
    if cfg.N != N:
        raise ValueError(f"configuration has N={cfg.N}, model has N={N}")
    s = cfg.spins
    out = []
    for k in range(1, m + 1):
        for x in range(0, N - k + 1):
            a, b = s[x], s[x + k]
            if a == b:
                continue
            if a == -1:
                r, d = sys_.exchange_rates[k - 1, 0], +1
            else:
                r, d = sys_.exchange_rates[k - 1, 1], -1
            if r > 0:
                out.append(EventDescriptor("exchange", float(r), x=x, k=k, direction=d))
    for side in (LEFT, RIGHT):
        for j in range(1, m + 1):
            site = j if side == LEFT else N - j + 1
            sign = CREATE if s[site] == -1 else ANNIHILATE
            r = sys_.flip_rates[side, j - 1, sign]
            if r > 0:
                out.append(EventDescriptor("flip", float(r), side=side, j=j, sign=sign))
    return out


def apply_event(cfg: Configuration, ev: EventDescriptor) -> Configuration:
    new = cfg.copy()
    if ev.kind == "exchange":
        x, y = ev.x, ev.x + ev.k
        new.spins[x], new.spins[y] = cfg.spins[y], cfg.spins[x]
    else:
        site = ev.j if ev.side == LEFT else cfg.N - ev.j + 1
        new.spins[site] = -cfg.spins[site]
        if ev.side == LEFT:
            new.left_flux += 1 if ev.sign == ANNIHILATE else -1
    return new


def step(cfg: Configuration, system: ParticleSystem, rng: np.random.Generator):
    """One exact Gillespie step: returns (dt, event, new configuration)."""
    events = enumerate_rates(cfg, system)
    if not events:
        raise AbsorbingStateError("total rate is zero")
    rates = np.fromiter((e.rate for e in events), dtype=float, count=len(events))
    cum = np.cumsum(rates)
    total = cum[-1]
    dt = rng.exponential(1.0 / total)
    i = int(np.searchsorted(cum, rng.random() * total, side="right"))
    ev = events[min(i, len(events) - 1)]
    return dt, ev, apply_event(cfg, ev)


def simulate(
    cfg0: Configuration,
    T_end: float,
    system: ParticleSystem,
    rng: np.random.Generator,
    observers: Sequence[Callable[[float, EventDescriptor, Configuration], None]] = (),
) -> Trajectory:
    if T_end > system.params.T_f:
        raise ValueError(f"T_end={T_end} exceeds the terminal time T_f={system.params.T_f}")
    traj = Trajectory(initial=cfg0.copy())
    cfg, t = cfg0.copy(), 0.0
    while True:
        try:
            dt, ev, new = step(cfg, system, rng)
        except AbsorbingStateError:
            break
        if t + dt > T_end:
            break
        t += dt
        cfg = new
        traj.times.append(t)
        traj.events.append(ev)
        if ev.kind == "flip":
            traj.counters[ev.side, ev.sign] += 1
        for obs in observers:
            obs(t, ev, cfg)
    traj.final = cfg
    return traj


def generator_apply(f: Callable[[Configuration], float], cfg: Configuration, params, derived=None, boundary=None) -> float:
    """(L f)(cfg) = sum over events of rate * (f(after) - f(before)).

    ``f`` may return an array, in which case the result is an array too.
    """
    f0 = np.asarray(f(cfg), dtype=float)
    out = np.zeros_like(f0)
    for ev in enumerate_rates(cfg, params, derived, boundary):
        out += ev.rate * (np.asarray(f(apply_event(cfg, ev)), dtype=float) - f0)
    return float(out) if out.ndim == 0 else out


def sample_initial(kind: str, N: int, rng: np.random.Generator | None = None) -> Configuration:
    if kind == "narrow_wedge":
        return Configuration(-np.ones(N + 1, dtype=np.int8))
    if kind == "near_stationary":
        if rng is None:
            raise ValueError("near_stationary sampling needs a generator")
        return Configuration((2 * rng.integers(0, 2, size=N + 1) - 1).astype(np.int8))
    raise ValueError(f"unknown initial data kind {kind!r}")


def all_configurations(N: int) -> Iterable[Configuration]:
    """Every spin configuration on sites 0..N (for exhaustive checks on small N)."""
    for bits in range(2 ** (N + 1)):
        s = np.array([1 if (bits >> i) & 1 else -1 for i in range(N + 1)], dtype=np.int8)
        yield Configuration(s)


def _hole_bits(spins: np.ndarray) -> int:
    return int(np.dot((spins == -1).astype(np.int64), 1 << np.arange(spins.size, dtype=np.int64)))


def spin_characters(N: int, width: int | None = None) -> np.ndarray:
    """Bit masks S of the spin products ``prod_{x in S} spin_x`` supported in a window of ``width`` sites.

    With the default ``width = N + 1`` the characters form a basis of all
    functions of the configuration.
    """
    width = N + 1 if width is None else width
    masks = np.arange(2 ** (N + 1), dtype=np.int64)
    keep = [s for s in masks if s == 0 or int(s).bit_length() - (int(s) & -int(s)).bit_length() < width]
    return np.asarray(keep, dtype=np.int64)


def bernoulli_invariance_error(system: ParticleSystem, masks: np.ndarray | None = None) -> float:
    """``max_S |sum_eta mu(eta) (L chi_S)(eta)|`` with mu the product Bernoulli(1/2) measure."""
    N = system.N
    masks = spin_characters(N) if masks is None else np.asarray(masks, dtype=np.int64)

    def chi(cfg):
        return 1 - 2 * (np.bitwise_count(masks & _hole_bits(cfg.spins)).astype(np.int64) & 1)

    # integer character increments are summed exactly per distinct rate
    by_rate: dict[float, np.ndarray] = {}
    for cfg in all_configurations(N):
        before = chi(cfg)
        for ev in enumerate_rates(cfg, system):
            acc = by_rate.setdefault(ev.rate, np.zeros(masks.size, dtype=np.int64))
            acc += chi(apply_event(cfg, ev)) - before
    total = np.zeros(masks.size)
    for rate in sorted(by_rate):
        total += rate * by_rate[rate]
    return float(np.abs(total).max()) / 2 ** (N + 1)


# ---------------------------------------------------------------------------
# compiled ensemble engine
#
# Each bond (x, x+k) belongs to one of three states: inactive (equal spins),
# class 2(k-1) (hole at x, particle at x+k) or class 2(k-1)+1.  Members of each
# class are kept in a dense array with a position index so insertion and
# removal are O(1).  Reservoir sites are handled directly since there are only
# 2m of them.


@numba.njit(cache=True)
def _bond_class(spins, x, k):
    a = spins[x]
    b = spins[x + k]
    if a == b:
        return -1
    if a == -1:
        return 2 * (k - 1)
    return 2 * (k - 1) + 1


@numba.njit(cache=True)
def _init_classes(spins, N, m):
    nb = (N + 1) * m
    members = np.empty((2 * m, N + 1), dtype=np.int64)
    count = np.zeros(2 * m, dtype=np.int64)
    pos = -np.ones(nb, dtype=np.int64)
    cls = -np.ones(nb, dtype=np.int64)
    for k in range(1, m + 1):
        for x in range(0, N - k + 1):
            b = x * m + (k - 1)
            c = _bond_class(spins, x, k)
            cls[b] = c
            if c >= 0:
                members[c, count[c]] = b
                pos[b] = count[c]
                count[c] += 1
    return members, count, pos, cls


@numba.njit(cache=True)
def _refresh_site(spins, N, m, site, members, count, pos, cls):
    for k in range(1, m + 1):
        for x in (site - k, site):
            if x < 0 or x + k > N:
                continue
            b = x * m + (k - 1)
            new = _bond_class(spins, x, k)
            old = cls[b]
            if new == old:
                continue
            if old >= 0:
                p = pos[b]
                last = members[old, count[old] - 1]
                members[old, p] = last
                pos[last] = p
                count[old] -= 1
                pos[b] = -1
            if new >= 0:
                members[new, count[new]] = b
                pos[b] = count[new]
                count[new] += 1
            cls[b] = new


@numba.njit(cache=True)
def _flip_rate(spins, N, side, j, flip_rates):
    site = j if side == 0 else N - j + 1
    sign = 0 if spins[site] == -1 else 1
    return flip_rates[side, j - 1, sign]


@numba.njit(cache=True)
def _run_checkpoints(spins, left_flux, checkpoints, ex_rates, flip_rates, rng, check_every):
    """Advance ``spins`` in place through sorted ``checkpoints``.

    Returns (spin snapshots, left flux at each checkpoint, event count).  When
    ``check_every`` > 0 the class tables are rebuilt from scratch every that many
    events and compared with the incremental ones.
    """
    N = spins.size - 1
    m = ex_rates.shape[0]
    members, count, pos, cls = _init_classes(spins, N, m)
    nchk = checkpoints.size
    snaps = np.empty((nchk, N + 1), dtype=np.int8)
    fluxes = np.empty(nchk, dtype=np.int64)
    t = 0.0
    n_events = 0
    ci = 0
    while ci < nchk and checkpoints[ci] <= 0.0:
        snaps[ci, :] = spins
        fluxes[ci] = left_flux
        ci += 1
    while ci < nchk:
        total = 0.0
        for k in range(m):
            total += count[2 * k] * ex_rates[k, 0] + count[2 * k + 1] * ex_rates[k, 1]
        for side in range(2):
            for j in range(1, m + 1):
                total += _flip_rate(spins, N, side, j, flip_rates)
        if total <= 0.0:
            while ci < nchk:
                snaps[ci, :] = spins
                fluxes[ci] = left_flux
                ci += 1
            break
        t += rng.exponential(1.0 / total)
        while ci < nchk and t > checkpoints[ci]:
            snaps[ci, :] = spins
            fluxes[ci] = left_flux
            ci += 1
        if ci >= nchk:
            break
        u = rng.random() * total
        done = False
        for k in range(m):
            for d in range(2):
                c = 2 * k + d
                w = count[c] * ex_rates[k, d]
                if u < w:
                    slot = int(u / ex_rates[k, d])
                    if slot >= count[c]:
                        slot = count[c] - 1
                    b = members[c, slot]
                    x = b // m
                    y = x + k + 1
                    tmp = spins[x]
                    spins[x] = spins[y]
                    spins[y] = tmp
                    _refresh_site(spins, N, m, x, members, count, pos, cls)
                    _refresh_site(spins, N, m, y, members, count, pos, cls)
                    done = True
                    break
                u -= w
            if done:
                break
        if not done:
            # reservoir flips; the last positive-rate flip absorbs round-off in u
            pick_side = -1
            pick_j = 0
            for side in range(2):
                for j in range(1, m + 1):
                    w = _flip_rate(spins, N, side, j, flip_rates)
                    if w > 0.0:
                        pick_side = side
                        pick_j = j
                        if u < w:
                            done = True
                            break
                    u -= w
                if done:
                    break
            if pick_side < 0:
                raise RuntimeError("event selection fell through with no reservoir events")
            site = pick_j if pick_side == 0 else N - pick_j + 1
            if pick_side == 0:
                left_flux += 1 if spins[site] == 1 else -1
            spins[site] = -spins[site]
            _refresh_site(spins, N, m, site, members, count, pos, cls)
        n_events += 1
        if check_every > 0 and n_events % check_every == 0:
            m2, c2, p2, cl2 = _init_classes(spins, N, m)
            for c in range(2 * m):
                if c2[c] != count[c]:
                    raise RuntimeError("incremental rate classes diverged from recomputation")
            for b in range(cls.size):
                if cl2[b] != cls[b]:
                    raise RuntimeError("incremental bond classes diverged from recomputation")
    return snaps, fluxes, n_events


def run_replica(
    cfg0: Configuration,
    checkpoints: Sequence[float],
    system: ParticleSystem,
    rng: np.random.Generator,
    check_every: int = 0,
):
    """Compiled simulation of one replica; returns snapshots at the checkpoints.

    Output is a tuple ``(configs, n_events)`` with one :class:`Configuration`
    per checkpoint.
    """
    chk = np.asarray(checkpoints, dtype=float)
    if np.any(np.diff(chk) < 0):
        raise ValueError("checkpoints must be sorted")
    if chk.size and chk[-1] > system.params.T_f:
        raise ValueError("checkpoint beyond T_f")
    spins = cfg0.spins.copy()
    snaps, fluxes, n = _run_checkpoints(
        spins, cfg0.left_flux, chk, system.exchange_rates, system.flip_rates, rng, check_every
    )
    return [Configuration(snaps[i], int(fluxes[i])) for i in range(chk.size)], int(n)


def total_rate(cfg: Configuration, system: ParticleSystem) -> float:
    return float(sum(e.rate for e in enumerate_rates(cfg, system)))


def replica_generators(seed: int, n: int) -> list[np.random.Generator]:
    """Independent generators for ``n`` replicas from one 64-bit seed."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]

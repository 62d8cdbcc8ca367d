"""Height function and microscopic Cole-Hopf transform.

The height at site x is ``h_x = h0 + N^{-1/2} * sum_{y=1}^{x} eta_y`` where ``h0``
is twice the net particle flux out of the left reservoir, scaled by
``N^{-1/2}``.  Heights are stored as integers ``sqrt(N) * h_x`` so that
incremental updates are exact; ``Z_x = exp(-lambda_N h_x + nu_N t)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import Configuration, EventDescriptor, ParticleSystem, generator_apply
from .model import ANNIHILATE, CREATE, LEFT, DerivedCoefficients


class HeightDriftError(RuntimeError):
    pass


def integer_heights(cfg: Configuration) -> np.ndarray:
    """sqrt(N) * h_x for x = 0..N, as exact integers."""
    s = cfg.spins.astype(np.int64)
    H = np.empty(cfg.N + 1, dtype=np.int64)
    H[0] = 0
    np.cumsum(s[1:], out=H[1:])
    return H + 2 * cfg.left_flux


def cole_hopf(cfg: Configuration, derived: DerivedCoefficients, t: float = 0.0) -> np.ndarray:
    return np.exp(-derived.tilt * integer_heights(cfg) + derived.nu_N * t)


@dataclass
class HeightState:
    H: np.ndarray
    t: float
    derived: DerivedCoefficients

    @property
    def N(self) -> int:
        return self.H.size - 1

    @property
    def h0(self) -> float:
        return self.H[0] / math.sqrt(self.N)

    @property
    def heights(self) -> np.ndarray:
        return self.H / math.sqrt(self.N)

    @property
    def Z(self) -> np.ndarray:
        return np.exp(-self.derived.tilt * self.H + self.derived.nu_N * self.t)

    def check(self, cfg: Configuration) -> None:
        expected = integer_heights(cfg)
        if not np.array_equal(expected, self.H):
            raise HeightDriftError("incremental heights disagree with the configuration")


def init_height(cfg: Configuration, derived: DerivedCoefficients, t: float = 0.0) -> HeightState:
    return HeightState(H=integer_heights(cfg), t=t, derived=derived)


def update_on_event(state: HeightState, event: EventDescriptor, before: Configuration, t: float) -> HeightState:
    """Apply the height change caused by ``event`` fired from ``before`` at time ``t``."""
    H = state.H.copy()
    N = state.N
    s = before.spins
    if event.kind == "exchange":
        x, y = event.x, event.x + event.k
        if s[x] != s[y]:
            delta = int(s[x]) - int(s[y])  # new s[y] minus old s[y]
            if x == 0:
                # site 0 is outside every prefix sum
                H[y:] += delta
            else:
                H[x:y] += -delta
    else:
        if event.side == LEFT:
            site = event.j
            if event.sign == CREATE:
                H[:site] -= 2
            else:
                H[:site] += 2
        else:
            site = N - event.j + 1
            H[site:] += 2 if event.sign == CREATE else -2
    return HeightState(H=H, t=t, derived=state.derived)


def track_heights(state: HeightState, check_every: int = 0):
    """Observer for :func:`dynamics.simulate` keeping ``state`` current.

    The returned callable takes ``(t, event, cfg_after)``; the pre-event
    configuration is reconstructed by undoing the event.
    """
    holder = {"state": state, "n": 0}

    def observe(t, ev, cfg_after):
        before = cfg_after.copy()
        if ev.kind == "exchange":
            x, y = ev.x, ev.x + ev.k
            before.spins[x], before.spins[y] = cfg_after.spins[y], cfg_after.spins[x]
        else:
            site = ev.j if ev.side == LEFT else cfg_after.N - ev.j + 1
            before.spins[site] = -cfg_after.spins[site]
        holder["state"] = update_on_event(holder["state"], ev, before, t)
        holder["n"] += 1
        if check_every and holder["n"] % check_every == 0:
            holder["state"].check(cfg_after)

    observe.holder = holder
    return observe


def drift_parts(cfg: Configuration, x: int, system: ParticleSystem) -> dict[str, float]:
    """Drift of Z_x divided by Z_x, split by mechanism.

    ``crossing``: exchanges over bonds with exactly one end in ``1..x`` other
    than site 0; ``anchor``: exchanges over bonds ``(0, k)`` with ``k <= x``;
    ``left``/``right``: reservoir flips; ``renormalisation``: nu_N.
    """
    N, m = system.N, system.m
    s = cfg.spins
    c = system.derived.tilt
    up, dn = math.expm1(2 * c), math.expm1(-2 * c)  # factors for Delta(sqrt(N) h) = -2, +2
    ex = system.exchange_rates
    crossing = anchor = 0.0
    for k in range(1, m + 1):
        hp, ph = ex[k - 1, 0], ex[k - 1, 1]
        for y in range(max(1, x - k + 1), x + 1):
            if y + k > N:
                continue
            if s[y] == -1 and s[y + k] == 1:
                crossing += hp * dn
            elif s[y] == 1 and s[y + k] == -1:
                crossing += ph * up
        if 1 <= k <= x:
            if s[0] == -1 and s[k] == 1:
                anchor += hp * up
            elif s[0] == 1 and s[k] == -1:
                anchor += ph * dn
    left = right = 0.0
    fl = system.flip_rates
    for j in range(1, m + 1):
        if j > x:
            left += fl[LEFT, j - 1, CREATE] * up if s[j] == -1 else fl[LEFT, j - 1, ANNIHILATE] * dn
        site = N - j + 1
        if site <= x:
            right += fl[1, j - 1, CREATE] * dn if s[site] == -1 else fl[1, j - 1, ANNIHILATE] * up
    return {
        "crossing": crossing,
        "anchor": anchor,
        "left": left,
        "right": right,
        "renormalisation": system.derived.nu_N,
    }


def sde_drift_rhs(cfg: Configuration, x: int, system: ParticleSystem, t: float = 0.0) -> float:
    """Closed-form drift of Z_x: Z_x times the sum of :func:`drift_parts`."""
    Zx = cole_hopf(cfg, system.derived, t)[x]
    return float(Zx * sum(drift_parts(cfg, x, system).values()))


def exact_drift(cfg: Configuration, x: int, system: ParticleSystem, t: float = 0.0) -> float:
    """(d/dt + L) applied to Z_x, with L evaluated event by event."""
    d = system.derived
    Lz = generator_apply(lambda c: cole_hopf(c, d, t)[x], cfg, system)
    return Lz + d.nu_N * cole_hopf(cfg, d, t)[x]


def exact_drift_all(cfg: Configuration, system: ParticleSystem, t: float = 0.0) -> np.ndarray:
    """:func:`exact_drift` at every site in one pass over the events."""
    d = system.derived
    return generator_apply(lambda c: cole_hopf(c, d, t), cfg, system) + d.nu_N * cole_hopf(cfg, d, t)


def drift_identity_error(system: ParticleSystem, t: float = 0.3, left_flux: int = 0) -> float:
    """Worst ``|exact - closed form| / (1 + |exact|)`` over every configuration and site."""
    from .dynamics import all_configurations

    worst = 0.0
    for cfg in all_configurations(system.N):
        cfg.left_flux = left_flux
        exact = exact_drift_all(cfg, system, t)
        for x in range(system.N + 1):
            rhs = sde_drift_rhs(cfg, x, system, t)
            worst = max(worst, abs(exact[x] - rhs) / (1 + abs(exact[x])))
    return worst


def rescale_narrow_wedge(Z, derived: DerivedCoefficients):
    if derived.lambda_N == 0:
        raise ValueError("narrow-wedge rescaling is undefined for lambda_N = 0")
    return 0.5 / derived.lambda_N * math.sqrt(derived.N) * np.asarray(Z)


# ---------------------------------------------------------------------------
# field classes


@dataclass
class FieldClassReport:
    name: str
    field_class: str
    support_size: int
    max_abs_mean: float
    sup_norm: float
    passed: bool


def _spin_table(n: int) -> np.ndarray:
    return np.array(list(itertools.product((-1, 1), repeat=n)), dtype=np.int8)


def field_class_check(
    functional: Callable[[np.ndarray], float],
    field_class: str,
    support_size: int,
    name: str = "",
    tol: float = 0.0,
) -> FieldClassReport:
    """Exact mean of ``functional`` over all spin assignments on its support.

    ``weakly_vanishing``: uniform (Bernoulli 1/2) mean.  ``pseudo_gradient``:
    uniform mean within every fixed particle number.
    """
    if support_size > 16:
        raise ValueError("exhaustive enumeration is limited to 16 sites")
    table = _spin_table(support_size)
    vals = np.array([functional(row) for row in table], dtype=float)
    if field_class == "weakly_vanishing":
        means = [vals.mean()]
    elif field_class == "pseudo_gradient":
        n_part = (table == 1).sum(axis=1)
        means = [vals[n_part == n].mean() for n in range(support_size + 1)]
    else:
        raise ValueError(f"unknown field class {field_class!r}")
    worst = float(np.max(np.abs(means)))
    return FieldClassReport(name, field_class, support_size, worst, float(np.max(np.abs(vals))), worst <= tol)


def _prod(idx: Sequence[int]):
    return lambda e: float(np.prod(e[list(idx)]))


def shipped_functionals() -> list[tuple[str, str, int, Callable[[np.ndarray], float]]]:
    """(name, class, support size, functional) for every functional the package relies on."""
    out = []
    # products of distinct spins are centred under Bernoulli(1/2)
    for idx in [(0,), (0, 1), (0, 3), (1, 2, 5), (0, 2, 4, 6), tuple(range(7)), tuple(range(0, 16, 3))]:
        size = max(idx) + 1
        out.append((f"spin product {idx}", "weakly_vanishing", size, _prod(idx)))
    out.append(("centred occupation times spin", "weakly_vanishing", 3,
                lambda e: (0.5 * (1 + e[0]) - 0.5) * e[2]))
    out.append(("two-site hop indicator difference", "weakly_vanishing", 2,
                lambda e: 0.25 * (1 - e[0]) * (1 + e[1]) - 0.25 * (1 + e[0]) * (1 - e[1])))
    # exchange-antisymmetric differences are centred under every canonical ensemble
    out.append(("spin gradient", "pseudo_gradient", 2, lambda e: float(e[0] - e[1])))
    out.append(("long spin gradient", "pseudo_gradient", 6, lambda e: float(e[0] - e[5])))
    out.append(("pair gradient", "pseudo_gradient", 4, lambda e: float(e[0] * e[1] - e[2] * e[3])))
    out.append(("shifted pair gradient", "pseudo_gradient", 5, lambda e: float(e[0] * e[2] - e[1] * e[4])))
    out.append(("gradient times spectator", "pseudo_gradient", 3, lambda e: float((e[0] - e[1]) * e[2])))
    out.append(("block gradient", "pseudo_gradient", 16,
                lambda e: float(e[:8].sum() - e[8:].sum()) * float(e[:8].sum() + e[8:].sum()) / 16.0))
    return out

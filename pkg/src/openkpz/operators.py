"""Discrete Laplacians on sites 0..N and their invariant measures.

``build_L_lap`` is the long-range operator the Cole-Hopf field is driven by.
Away from the edges it is ``(1/2) sum_k tilde_alpha_k N^2 (phi_{x+k} + phi_{x-k} - 2 phi_x)``;
jumps that would leave ``0..N`` are truncated at the nearest edge site, which is
the same as replacing the outgoing gradient by ``grad_{-(k ^ x)}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import DerivedCoefficients


class DegenerateOperatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class LatticeOperator:
    matrix: np.ndarray
    kind: str
    A_minus: float = 0.0
    A_plus: float = 0.0

    @property
    def N(self) -> int:
        return self.matrix.shape[0] - 1

    def __matmul__(self, phi):
        return self.matrix @ phi


@dataclass(frozen=True)
class InvariantMeasure:
    pi: np.ndarray
    residual: float

    @property
    def ratio(self) -> float:
        return float(self.pi.max() / self.pi.min())


def build_L_lap(derived: DerivedCoefficients) -> LatticeOperator:
    N, m = derived.N, derived.m
    L = np.zeros((N + 1, N + 1))
    rows = np.arange(N + 1)
    for k in range(1, m + 1):
        w = 0.5 * derived.tilde_alpha[k - 1] * N * N
        L[rows, np.minimum(rows + k, N)] += w
        L[rows, np.maximum(rows - k, 0)] += w
        L[rows, rows] -= 2 * w
    return LatticeOperator(L, "L_lap")


def nn_laplacian(N: int, diffusivity: float, mu_minus: float = 1.0, mu_plus: float = 1.0) -> LatticeOperator:
    """``diffusivity * N^2 * Delta_1`` with ghost sites ``phi_{-1} = mu_minus phi_0``, ``phi_{N+1} = mu_plus phi_N``."""
    w = diffusivity * N * N
    L = np.zeros((N + 1, N + 1))
    i = np.arange(N)
    L[i, i + 1] += w
    L[i + 1, i] += w
    L[np.arange(N + 1), np.arange(N + 1)] -= 2 * w
    L[0, 0] += w * mu_minus
    L[N, N] += w * mu_plus
    return LatticeOperator(L, "nn_laplacian", N * (1 - mu_minus), N * (1 - mu_plus))


def delta_k(N: int, k: int) -> np.ndarray:
    """Unclamped ``N^2 Delta_k`` rows, entries outside 0..N dropped (for interior use only)."""
    D = np.zeros((N + 1, N + 1))
    for x in range(N + 1):
        D[x, x] -= 2 * N * N
        if x + k <= N:
            D[x, x + k] += N * N
        if x - k >= 0:
            D[x, x - k] += N * N
    return D


def adjoint_closed_form(derived: DerivedCoefficients) -> np.ndarray:
    """Adjoint of ``L_lap`` in the flat inner product, assembled site class by site class.

    For each range k the adjoint at y collects the sources whose truncated jump
    lands on y: ``phi_{y-k} + phi_{y+k}`` in the bulk, ``phi_0 + ... + phi_k`` at
    y = 0, only ``phi_{y+k}`` for ``0 < y < k``, and mirror images on the right.
    """
    N, m = derived.N, derived.m
    A = np.zeros((N + 1, N + 1))
    for k in range(1, m + 1):
        w = 0.5 * derived.tilde_alpha[k - 1] * N * N
        for y in range(N + 1):
            A[y, y] -= 2 * w
            # backward legs landing on y
            if y == 0:
                A[y, 0 : k + 1] += w
            elif y + k <= N:
                A[y, y + k] += w
            # forward legs landing on y
            if y == N:
                A[y, N - k : N + 1] += w
            elif y - k >= 0:
                A[y, y - k] += w
    return A


def adjoint_flat(op: LatticeOperator, derived: DerivedCoefficients | None = None, tol: float = 1e-12) -> LatticeOperator:
    adj = op.matrix.T.copy()
    if derived is not None and op.kind == "L_lap":
        closed = adjoint_closed_form(derived)
        scale = max(1.0, np.abs(adj).max())
        err = np.abs(closed - adj).max() / scale
        if err > tol:
            raise AssertionError(f"adjoint closed form disagrees with the transpose (rel. err {err:.3g})")
    return LatticeOperator(adj, "adjoint", op.A_minus, op.A_plus)


def invariant_measure(op: LatticeOperator, tol: float = 1e-10) -> InvariantMeasure:
    """Positive solution of ``op^T pi = 0`` normalised to ``sum pi = N + 1``."""
    A = op.matrix.T
    n = A.shape[0]
    sv = scipy.linalg.svdvals(A)
    scale = sv[0]
    null_dim = int(np.sum(sv <= tol * scale))
    if null_dim != 1:
        raise DegenerateOperatorError(f"kernel of the adjoint has dimension {null_dim}")
    # replace one equation by the normalisation; the kernel is one-dimensional
    B = A.copy()
    rhs = np.zeros(n)
    B[-1, :] = 1.0
    rhs[-1] = n
    pi = np.linalg.solve(B, rhs)
    if np.any(pi <= 0):
        raise DegenerateOperatorError("invariant measure is not strictly positive")
    residual = float(np.abs(A @ pi).max())
    return InvariantMeasure(pi, residual)


def symmetrized(op: LatticeOperator, pi: np.ndarray) -> LatticeOperator:
    """``(L + L^{*,pi}) / 2`` where ``L^{*,pi} = diag(pi)^{-1} L^T diag(pi)``."""
    L = op.matrix
    adj = (L.T * pi[None, :]) / pi[:, None]
    return LatticeOperator(0.5 * (L + adj), "symmetrized", op.A_minus, op.A_plus)


def dirichlet_form(op: LatticeOperator, pi: np.ndarray, phi: np.ndarray) -> float:
    """``<phi, -L phi>_pi``."""
    return float(-np.dot(phi * pi, op.matrix @ phi))


@dataclass(frozen=True)
class NashTerms:
    lhs: float
    l1_term: float
    gradient_term: float

    @property
    def constant(self) -> float:
        """Smallest C with lhs <= C (l1_term + gradient_term)."""
        return self.lhs / (self.l1_term + self.gradient_term)


def nash_inequality_eval(phi: np.ndarray) -> NashTerms:
    phi = np.asarray(phi, dtype=float)
    N = phi.size - 1
    l1 = float(np.abs(phi).sum())
    # |sqrt(-Delta) phi|^2 for the Neumann Laplacian is the sum of squared increments
    grad = float(np.sum(np.diff(phi) ** 2))
    return NashTerms(
        lhs=float(np.sqrt(np.sum(phi**2))),
        l1_term=N ** -0.5 * l1,
        gradient_term=grad ** (1 / 6) * l1 ** (2 / 3),
    )


@dataclass(frozen=True)
class MaxPrincipleReport:
    argmax: int
    argmin: int
    max_in_clusters: bool
    min_in_clusters: bool

    @property
    def passed(self) -> bool:
        return self.max_in_clusters and self.min_in_clusters


def max_principle_check(pi: np.ndarray, m: int, rtol: float = 1e-12) -> MaxPrincipleReport:
    """Extrema of ``pi`` must be attained inside the edge clusters (ties count for the edge)."""
    N = pi.size - 1
    cluster = np.r_[0:m, N - m + 1 : N + 1]
    tol = rtol * np.abs(pi).max()
    hi, lo = pi.max(), pi.min()
    return MaxPrincipleReport(
        argmax=int(np.argmax(pi)),
        argmin=int(np.argmin(pi)),
        max_in_clusters=bool(pi[cluster].max() >= hi - tol),
        min_in_clusters=bool(pi[cluster].min() <= lo + tol),
    )

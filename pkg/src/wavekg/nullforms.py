"""Null forms, the two right-hand sides, and the divergence-form rewrite.

Index convention: lower index alpha in {0, 1, 2} with d_0 = d_t; indices
are raised with eta = diag(-1, 1, 1).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .fields import CouplingTensors, FieldState
from .grid import Grid, dealias, gradient, laplacian

log = logging.getLogger(__name__)

ETA = (-1.0, 1.0, 1.0)

NullMode = Literal["standard", "broken"]


class InertIndexWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class Jet:
    """A field with its first spacetime derivatives.

    Built with :meth:`from_field`, the spatial entries are spectral
    derivatives of ``value``.  Direct construction accepts any arrays (or
    scalars), which is how exact polynomial tests feed in ``x1`` or ``t``.
    """

    value: np.ndarray
    dt: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    grid: Grid | None = None

    @classmethod
    def from_field(cls, grid: Grid, value: np.ndarray, dt: np.ndarray) -> "Jet":
        d1, d2 = gradient(grid, value)
        return cls(value, dt, d1, d2, grid)

    def d(self, alpha: int):
        """Lower-index derivative d_alpha."""
        if alpha == 0:
            return self.dt
        if alpha == 1:
            return self.d1
        if alpha == 2:
            return self.d2
        raise IndexError(f"spacetime index must be 0, 1 or 2, got {alpha!r}")

    def up(self, alpha: int):
        """Upper-index derivative d^alpha."""
        return ETA[alpha] * self.d(alpha)


def state_jets(state: FieldState) -> tuple[Jet, Jet]:
    g = state.grid
    return Jet.from_field(g, state.w, state.wt), Jet.from_field(g, state.v, state.vt)


def _shared_grid(m: Jet, n: Jet) -> Grid | None:
    if m.grid is not None and n.grid is not None and not m.grid.same_as(n.grid):
        raise ValueError("jets live on different grids")
    return m.grid if m.grid is not None else n.grid


def _finish(grid: Grid | None, out, dealiased: bool):
    out = np.asarray(out, dtype=float)
    if dealiased and grid is not None:
        return dealias(grid, np.broadcast_to(out, grid.shape).copy())
    return out


def q0(m: Jet, n: Jet, dealiased: bool = True) -> np.ndarray:
    """Q_0(m, n) = d_alpha m d^alpha n."""
    grid = _shared_grid(m, n)
    out = -m.dt * n.dt + m.d1 * n.d1 + m.d2 * n.d2
    return _finish(grid, out, dealiased)


def qab(alpha: int, beta: int, m: Jet, n: Jet, dealiased: bool = True) -> np.ndarray:
    """Q_ab(m, n) = d_a m d_b n - d_a n d_b m."""
    for idx in (alpha, beta):
        if idx not in (0, 1, 2):
            raise IndexError(f"spacetime index must be 0, 1 or 2, got {idx!r}")
    grid = _shared_grid(m, n)
    if alpha == beta:
        warnings.warn(f"Q_{alpha}{beta} vanishes identically", InertIndexWarning, stacklevel=2)
        return _finish(grid, np.zeros_like(np.asarray(m.value, dtype=float)), False)
    out = m.d(alpha) * n.d(beta) - n.d(alpha) * m.d(beta)
    return _finish(grid, out, dealiased)


def q0_broken(m: Jet, n: Jet, dealiased: bool = True) -> np.ndarray:
    """d_t m d_t n, the non-null replacement for Q_0 used in A/B runs."""
    return _finish(_shared_grid(m, n), m.dt * n.dt, dealiased)


def nonlinearity(C: float, Cab: np.ndarray, m: Jet, n: Jet, dealiased: bool = True,
                 null: NullMode = "standard") -> np.ndarray:
    """C Q_0(m, n) + sum over a != b of Cab[a, b] Q_ab(m, n)."""
    first = q0_broken if null == "broken" else q0
    out = C * first(m, n, dealiased=False) if C else 0.0
    for a in range(3):
        for b in range(a + 1, 3):
            # Q_ab = -Q_ba, so the pair contributes with the antisymmetrized weight
            c = Cab[a, b] - Cab[b, a]
            if c:
                out = out + c * qab(a, b, m, n, dealiased=False)
    grid = _shared_grid(m, n)
    if np.isscalar(out) or np.ndim(out) == 0:
        shape = grid.shape if grid is not None else np.shape(m.value)
        out = np.full(shape, float(out))
    return _finish(grid, out, dealiased)


def rhs(state: FieldState, null: NullMode = "standard",
        jets: tuple[Jet, Jet] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(F_w, F_v), both dealiased."""
    c = state.couplings
    wj, vj = jets if jets is not None else state_jets(state)
    fw = nonlinearity(c.C1, c.C1ab, wj, vj, True, null)
    fv = nonlinearity(c.C2, c.C2ab, wj, vj, True, null)
    return fw, fv


# ---------------------------------------------------------------------------
# divergence form of the wave nonlinearity

@dataclass(frozen=True, eq=False)
class Decomposition:
    """Pieces of ``N = d^a F_a + d_a H^a + G`` for the wave right-hand side."""

    F: tuple[np.ndarray, np.ndarray, np.ndarray]   # lower index
    H: tuple[np.ndarray, np.ndarray, np.ndarray]   # upper index
    G: np.ndarray


def _weights(C1: float, n: np.ndarray):
    # F_a = fw(n) d_a m, H^a = sum_b A^{ba} hw(n) d_b m; primes are d/dn
    fw = C1 * n + 0.5 * C1**2 * n**2
    fwp = C1 + C1**2 * n
    hw = n + 0.5 * C1 * n**2
    hwp = 1.0 + C1 * n
    return fw, fwp, hw, hwp


def divergence_decomposition(state: FieldState, dealiased: bool = True,
                             jets: tuple[Jet, Jet] | None = None) -> Decomposition:
    """F_a, H^a and G built from (m, n) = (w, v)."""
    c = state.couplings
    g = state.grid
    m, n = jets if jets is not None else state_jets(state)
    fw, _, hw, _ = _weights(c.C1, n.value)
    A = c.C1ab.T - c.C1ab  # A[a, b] = C^{ba} - C^{ab}
    F = tuple(fw * m.d(a) for a in range(3))
    H = tuple(sum(A[a, b] * hw * m.d(b) for b in range(3)) + np.zeros(g.shape) for a in range(3))
    N = nonlinearity(c.C1, c.C1ab, m, n, dealiased=False)
    G = 0.5 * c.C1**2 * n.value**2 * N
    if dealiased:
        F = tuple(dealias(g, f) for f in F)
        H = tuple(dealias(g, f) for f in H)
        G = dealias(g, G)
    return Decomposition(F, H, G)


def divergence_pieces(state: FieldState) -> tuple[np.ndarray, np.ndarray]:
    """Return (N, d^a F_a + d_a H^a + G), with time derivatives by substitution.

    Products are not dealiased, so the two arrays agree up to aliasing of
    the products and roundoff.
    """
    c = state.couplings
    g = state.grid
    m, n = state_jets(state)
    N = nonlinearity(c.C1, c.C1ab, m, n, dealiased=False)
    m_tt = laplacian(g, state.w) + N
    mt1, mt2 = gradient(g, state.wt)
    dt_dm = (m_tt, mt1, mt2)  # d_t d_b m for b = 0, 1, 2

    fw, fwp, hw, hwp = _weights(c.C1, n.value)
    A = c.C1ab.T - c.C1ab

    dtF0 = fwp * n.dt * m.dt + fw * m_tt
    F1 = fw * m.d1
    F2 = fw * m.d2
    divF = -dtF0 + gradient(g, F1)[0] + gradient(g, F2)[1]

    dtH0 = np.zeros(g.shape)
    for b in range(3):
        if A[0, b]:
            dtH0 += A[0, b] * (hwp * n.dt * m.d(b) + hw * dt_dm[b])
    H1 = sum(A[1, b] * hw * m.d(b) for b in range(3)) + np.zeros(g.shape)
    H2 = sum(A[2, b] * hw * m.d(b) for b in range(3)) + np.zeros(g.shape)
    divH = dtH0 + gradient(g, H1)[0] + gradient(g, H2)[1]

    G = 0.5 * c.C1**2 * n.value**2 * N
    return N, divF + divH + G


def decomposition_residual(state: FieldState) -> float:
    """Sup norm of N - (d^a F_a + d_a H^a + G)."""
    N, rhs_ = divergence_pieces(state)
    return float(np.max(np.abs(N - rhs_)))


# ---------------------------------------------------------------------------
# null-form bound

def nullform_bound_ratio(state: FieldState, exclude_radius: float | None = None,
                         floor: float = 1e-300) -> tuple[float, int]:
    """Max over nodes and null forms of |Q(w, v)| / sum_i(|G_i w||dv| + |G_i v||dw|).

    Nodes with r below ``exclude_radius`` (default h) are skipped.  Returns
    the ratio and the number of excluded nodes.
    """
    g = state.grid
    m, n = state_jets(state)
    r = g.r
    rr = np.where(r > 0, r, 1.0)
    om = (np.where(r > 0, g.x1 / rr, 0.0), np.where(r > 0, g.x2 / rr, 0.0))
    Gm = [m.d(i + 1) + om[i] * m.dt for i in range(2)]
    Gn = [n.d(i + 1) + om[i] * n.dt for i in range(2)]
    dm = np.sqrt(m.dt**2 + m.d1**2 + m.d2**2)
    dn = np.sqrt(n.dt**2 + n.d1**2 + n.d2**2)
    denom = sum(np.abs(Gm[i]) * dn + np.abs(Gn[i]) * dm for i in range(2))

    forms = [q0(m, n, dealiased=False)]
    forms += [qab(a, b, m, n, dealiased=False) for a in range(3) for b in range(a + 1, 3)]
    numer = np.max(np.abs(np.stack(forms)), axis=0)

    cut = g.h if exclude_radius is None else exclude_radius
    excluded = r < cut
    use = (~excluded) & (denom > floor)
    if not np.any(use):
        return 0.0, int(excluded.sum())
    return float(np.max(numer[use] / denom[use])), int(excluded.sum())

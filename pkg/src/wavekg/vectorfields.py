"""Klainerman vector fields applied to snapshots.

A :class:`DerivTable` holds every partial derivative d_t^a d_1^b d_2^c u
with a + b + c <= K at one time.  The generators have coefficients of
degree at most one in (t, x), so applying one to a table of order K gives
the table of order K - 1 exactly by the Leibniz rule; no transform of a
non-periodic product is ever taken.

For solution snapshots, time derivatives come from the equations of
motion (d_t^2 w = lap w + F_w, d_t^2 v = lap v - v + F_v, differentiated
in time by the product rule) and spatial ones from FFTs.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .fields import FieldState
from .grid import Grid, dealias, gradient, laplacian
from .nullforms import Jet, NullMode

VECTOR_FIELDS = ("dt", "d1", "d2", "Om", "H1", "H2")
GENERATORS = VECTOR_FIELDS + ("S",)
MAX_CAP = 3


class OrderError(ValueError):
    pass


Index = tuple[int, int, int]
E = ((1, 0, 0), (0, 1, 0), (0, 0, 1))


def _add(g: Index, d: Index, sign: int = 1) -> Index:
    return (g[0] + sign * d[0], g[1] + sign * d[1], g[2] + sign * d[2])


def multi_indices(order: int) -> list[Index]:
    return [(a, b, c) for k in range(order + 1)
            for a in range(k + 1) for b in range(k - a + 1) for c in [k - a - b]]


# (coefficient, direction): coefficient is a float or a coordinate name with sign
_TERMS = {
    "dt": [((1.0, None), 0)],
    "d1": [((1.0, None), 1)],
    "d2": [((1.0, None), 2)],
    "Om": [((1.0, 1), 2), ((-1.0, 2), 1)],                 # x1 d2 - x2 d1
    "H1": [((1.0, 0), 1), ((1.0, 1), 0)],                  # t d1 + x1 dt
    "H2": [((1.0, 0), 2), ((1.0, 2), 0)],                  # t d2 + x2 dt
    "S": [((1.0, 0), 0), ((1.0, 1), 1), ((1.0, 2), 2)],    # t dt + x1 d1 + x2 d2
}


@dataclass(eq=False)
class DerivTable:
    """All partials up to ``order`` of one function at time ``t``.

    ``x1``/``x2`` are the node coordinates the entries are sampled on.
    """

    order: int
    t: float
    x1: np.ndarray
    x2: np.ndarray
    entries: dict[Index, np.ndarray]
    grid: Grid | None = None

    def __getitem__(self, idx: Index) -> np.ndarray:
        if sum(idx) > self.order:
            raise OrderError(f"derivative {idx} exceeds table order {self.order}")
        return self.entries[idx]

    @property
    def value(self) -> np.ndarray:
        return self.entries[(0, 0, 0)]

    def coord(self, nu: int):
        return self.t if nu == 0 else (self.x1 if nu == 1 else self.x2)

    def d(self, alpha: int) -> np.ndarray:
        return self[E[alpha]]

    def jet(self) -> Jet:
        if self.order < 1:
            raise OrderError("a jet needs a table of order >= 1")
        return Jet(self.value, self.d(0), self.d(1), self.d(2), self.grid)

    def _like(self, order: int, entries: dict) -> "DerivTable":
        return DerivTable(order, self.t, self.x1, self.x2, entries, self.grid)

    def derivative(self, alpha: int) -> "DerivTable":
        """Table of d_alpha u (order drops by one)."""
        if self.order < 1:
            raise OrderError("cannot differentiate a table of order 0")
        k = self.order - 1
        return self._like(k, {g: self.entries[_add(g, E[alpha])] for g in multi_indices(k)})

    def apply(self, gen: str) -> "DerivTable":
        """Table of (gen u), one order lower."""
        if gen not in _TERMS:
            raise ValueError(f"unknown generator {gen!r}; expected one of {GENERATORS}")
        if self.order < 1:
            raise OrderError(f"applying {gen} needs a table of order >= 1")
        k = self.order - 1
        out = {}
        for g in multi_indices(k):
            acc = 0.0
            for (c, nu), mu in _TERMS[gen]:
                acc = acc + (c * self.entries[_add(g, E[mu])] if nu is None
                             else c * self.coord(nu) * self.entries[_add(g, E[mu])])
                if nu is not None and g[nu] > 0:
                    # derivative falling on the linear coefficient
                    acc = acc + c * g[nu] * self.entries[_add(_add(g, E[nu], -1), E[mu])]
            out[g] = np.asarray(acc) + np.zeros(np.shape(self.value))
        return self._like(k, out)

    def apply_word(self, word: Sequence[str]) -> "DerivTable":
        """Apply generators left to right: ``word[0]`` acts first."""
        tab = self
        for gen in tuple(word):
            tab = tab.apply(gen)
        return tab

    def box(self) -> "DerivTable":
        """Table of box u = -u_tt + u_11 + u_22 (order drops by two)."""
        if self.order < 2:
            raise OrderError("box needs a table of order >= 2")
        k = self.order - 2
        return self._like(k, {g: -self.entries[_add(g, (2, 0, 0))] + self.entries[_add(g, (0, 2, 0))]
                               + self.entries[_add(g, (0, 0, 2))] for g in multi_indices(k)})

    def truncate(self, order: int) -> "DerivTable":
        return self._like(order, {g: self.entries[g] for g in multi_indices(order)})

    def combine(self, other: "DerivTable", a: float = 1.0, b: float = 1.0) -> "DerivTable":
        k = min(self.order, other.order)
        return self._like(k, {g: a * self.entries[g] + b * other.entries[g] for g in multi_indices(k)})


# ---------------------------------------------------------------------------
# builders

def table_from_levels(grid: Grid, t: float, levels: Sequence[np.ndarray], order: int) -> DerivTable:
    """Fill a table from time derivatives ``levels[a] = d_t^a u`` by FFT in space."""
    if len(levels) < order + 1:
        raise OrderError(f"need {order + 1} time levels, got {len(levels)}")
    entries = {}
    for a in range(order + 1):
        fh = grid.fft(levels[a])
        for b in range(order - a + 1):
            for c in range(order - a - b + 1):
                if b == 0 and c == 0:
                    entries[(a, 0, 0)] = levels[a]
                else:
                    entries[(a, b, c)] = grid.ifft(grid.ik1**b * grid.ik2**c * fh)
    return DerivTable(order, float(t), grid.x1, grid.x2, entries, grid)


def table_from_sympy(expr, symbols, t: float, x1, x2, order: int,
                     grid: Grid | None = None, spatial: str = "exact") -> DerivTable:
    """Table of a closed-form spacetime function.

    ``symbols`` are the sympy symbols (t, x1, x2).  With ``spatial="spectral"``
    only time derivatives are taken symbolically and space is done by FFT.
    """
    import sympy as sp

    ts, s1, s2 = symbols
    entries = {}
    if spatial == "spectral":
        if grid is None:
            raise ValueError("spectral assembly needs a grid")
        levels = []
        for a in range(order + 1):
            f = sp.lambdify((ts, s1, s2), sp.diff(expr, ts, a), "numpy")
            levels.append(np.broadcast_to(np.asarray(f(t, grid.x1, grid.x2), dtype=float),
                                          grid.shape).copy())
        return table_from_levels(grid, t, levels, order)
    shape = np.broadcast(np.asarray(x1), np.asarray(x2)).shape
    for g in multi_indices(order):
        d = expr
        for sym, k in zip((ts, s1, s2), g):
            if k:
                d = sp.diff(d, sym, k)
        f = sp.lambdify((ts, s1, s2), d, "numpy")
        entries[g] = np.broadcast_to(np.asarray(f(t, x1, x2), dtype=float), shape).copy()
    return DerivTable(order, float(t), np.asarray(x1, dtype=float), np.asarray(x2, dtype=float),
                      entries, grid)


def bilinear_matrix(C: float, Cab: np.ndarray, null: NullMode = "standard") -> np.ndarray:
    """M with C Q_0 + C^{ab} Q_ab = sum M[mu, nu] d_mu w d_nu v."""
    Cab = np.asarray(Cab, dtype=float)
    M = Cab - Cab.T
    if null == "broken":
        M = M + C * np.diag([1.0, 0.0, 0.0])
    else:
        M = M + C * np.diag([-1.0, 1.0, 1.0])
    return M


def time_levels(state: FieldState, depth: int, null: NullMode = "standard",
                with_forces: bool = False):
    """d_t^a w and d_t^a v for a <= depth by repeated substitution.

    With ``with_forces`` also returns d_t^a F_w and d_t^a F_v for a <= depth - 2.
    """
    g = state.grid
    c = state.couplings
    Mw = bilinear_matrix(c.C1, c.C1ab, null)
    Mv = bilinear_matrix(c.C2, c.C2ab, null)
    W = [state.w, state.wt]
    V = [state.v, state.vt]
    gw: list[tuple] = []
    gv: list[tuple] = []
    Fw: list[np.ndarray] = []
    Fv: list[np.ndarray] = []

    def first_derivs(levels, grads, l):
        # (d_t, d_1, d_2) of d_t^l u
        while len(grads) <= l:
            grads.append(gradient(g, levels[len(grads)]))
        return (levels[l + 1],) + grads[l]

    for a in range(max(depth - 1, 0)):
        fw = np.zeros(g.shape)
        fv = np.zeros(g.shape)
        for l in range(a + 1):
            binom = math.comb(a, l)
            dw = first_derivs(W, gw, l)
            dv = first_derivs(V, gv, a - l)
            for mu in range(3):
                for nu in range(3):
                    if Mw[mu, nu] or Mv[mu, nu]:
                        p = binom * dw[mu] * dv[nu]
                        fw += Mw[mu, nu] * p
                        fv += Mv[mu, nu] * p
        if not c.wave_is_linear or null == "broken":
            fw = dealias(g, fw)
        fv = dealias(g, fv)
        Fw.append(fw)
        Fv.append(fv)
        W.append(laplacian(g, W[a]) + fw)
        V.append(laplacian(g, V[a]) - V[a] + fv)
    W, V = W[:depth + 1], V[:depth + 1]
    if with_forces:
        return W, V, Fw, Fv
    return W, V


def state_tables(state: FieldState, order: int, null: NullMode = "standard"):
    """Derivative tables of w and v of the given order."""
    W, V = time_levels(state, order, null)
    return (table_from_levels(state.grid, state.t, W, order),
            table_from_levels(state.grid, state.t, V, order))


def force_tables(state: FieldState, order: int, null: NullMode = "standard"):
    """Derivative tables of F_w and F_v (needs time levels to order + 2)."""
    W, V, Fw, Fv = time_levels(state, order + 2, null, with_forces=True)
    return (table_from_levels(state.grid, state.t, Fw, order),
            table_from_levels(state.grid, state.t, Fv, order))


# ---------------------------------------------------------------------------
# words

def parse_word(word: str | Sequence[str]) -> tuple[str, ...]:
    if isinstance(word, str):
        if word in ("", "e"):
            return ()
        word = word.split(".")
    out = tuple(word)
    for gen in out:
        if gen not in GENERATORS:
            raise ValueError(f"unknown generator {gen!r} in word; expected one of {GENERATORS}")
    return out


def word_name(word: Sequence[str]) -> str:
    return ".".join(word) if word else "e"


def canonical_words(cap: int, generators: Sequence[str] = VECTOR_FIELDS) -> list[tuple[str, ...]]:
    """Multi-index words Gamma^I with |I| <= cap in the fixed generator order."""
    out = []
    for k in range(cap + 1):
        out += list(itertools.combinations_with_replacement(generators, k))
    return out


def word_tables(base: DerivTable, words: Iterable[Sequence[str]]) -> dict[tuple[str, ...], DerivTable]:
    """Apply many words (left to right), reusing shared prefixes."""
    cache: dict[tuple[str, ...], DerivTable] = {(): base}

    def get(word):
        if word not in cache:
            cache[word] = get(word[:-1]).apply(word[-1])
        return cache[word]

    return {tuple(w): get(tuple(w)) for w in words}


def iter_word_tables(bases: Sequence[DerivTable], cap: int,
                     generators: Sequence[str] = VECTOR_FIELDS):
    """Depth-first walk over canonical words with |I| <= cap.

    Yields ``(word, tables)`` with one table per base, so several functions
    share a traversal while only the current branch is held in memory.
    """
    def walk(word, tabs, start):
        yield word, tabs
        if len(word) == cap:
            return
        for k in range(start, len(generators)):
            gen = generators[k]
            yield from walk(word + (gen,), [tb.apply(gen) for tb in tabs], k)

    yield from walk((), list(bases), 0)


def apply_field(gen: str, jet_table: DerivTable, t: float | None = None) -> DerivTable:
    """Apply one generator; the input must carry one more derivative than the output needs."""
    if t is not None and not math.isclose(t, jet_table.t, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"time {t} differs from the table time {jet_table.t}")
    return jet_table.apply(gen)


def apply_word(word: str | Sequence[str], state: FieldState, target: str = "w",
               cap: int = 2, null: NullMode = "standard") -> np.ndarray:
    """Gamma^I applied to w or v of a snapshot, as a field."""
    word = parse_word(word)
    if len(word) > cap or cap > MAX_CAP:
        raise OrderError(f"word {word_name(word)} exceeds the order cap {min(cap, MAX_CAP)}")
    tw, tv = state_tables(state, len(word), null)
    base = {"w": tw, "v": tv}[target]
    return base.apply_word(word).value


# ---------------------------------------------------------------------------
# good derivatives

def excluded_nodes(grid: Grid) -> np.ndarray:
    """Nodes where x/r is undefined at grid scale."""
    return grid.r < 0.5 * grid.h


def _unit(x1, x2, cut: float):
    r = np.hypot(x1, x2)
    safe = np.where(r >= cut, r, 1.0)
    return np.where(r >= cut, x1 / safe, 0.0), np.where(r >= cut, x2 / safe, 0.0), r < cut


def good_derivative(i: int, jet: Jet | DerivTable, x1=None, x2=None, cut: float | None = None):
    """G_i u = (x_i / r) d_t u + d_i u.

    Coordinates default to the jet's grid.  Returns the field and the mask
    of excluded nodes (r below half a cell), where the weight is zeroed.
    """
    if isinstance(jet, DerivTable):
        x1 = jet.x1 if x1 is None else x1
        x2 = jet.x2 if x2 is None else x2
        grid = jet.grid
        jet = jet.jet()
    else:
        grid = jet.grid
        if x1 is None:
            x1, x2 = grid.x1, grid.x2
    if cut is None:
        cut = 0.5 * grid.h if grid is not None else 0.0
    o1, o2, excl = _unit(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float), cut)
    om = o1 if i == 1 else o2
    if i not in (1, 2):
        raise ValueError(f"good derivative index must be 1 or 2, got {i!r}")
    return om * jet.dt + jet.d(i), excl


# ---------------------------------------------------------------------------
# identity checks

def commutator_residual(kind: str, table: DerivTable, gen: str | None = None) -> float:
    """Sup of [box, gen]u (kind 'box-gamma') or [box, S]u - 2 box u (kind 'box-S')."""
    if table.order < 3:
        raise OrderError("commutator checks need a table of order >= 3")
    if kind == "box-gamma":
        if gen not in VECTOR_FIELDS:
            raise ValueError(f"box-gamma needs a generator from {VECTOR_FIELDS}")
        res = table.apply(gen).box().combine(table.box().apply(gen), 1.0, -1.0)
        return float(np.max(np.abs(res.value)))
    if kind == "box-S":
        lhs = table.apply("S").box().combine(table.box().apply("S"), 1.0, -1.0)
        res = lhs.value - 2.0 * table.box().value
        return float(np.max(np.abs(res)))
    raise ValueError(f"unknown commutator kind {kind!r}")


def commutator_span_residual(table: DerivTable, alpha: int, gen: str) -> tuple[float, np.ndarray]:
    """Relative least-squares residual of [d_alpha, gen]u against span{d_t u, d_1 u, d_2 u}.

    Returns the residual and the fitted coefficients.
    """
    if table.order < 2:
        raise OrderError("span check needs a table of order >= 2")
    comm = table.apply(gen).derivative(alpha).value - table.derivative(alpha).apply(gen).value
    basis = np.stack([table.d(b).ravel() for b in range(3)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, comm.ravel(), rcond=None)
    resid = comm.ravel() - basis @ coef
    scale = max(np.max(np.abs(basis)), 1e-300)
    return float(np.max(np.abs(resid)) / scale), coef


@dataclass(frozen=True)
class RepresentationReport:
    max_rel_error_dt: float
    max_rel_error_dx: float
    g_forms_mismatch: float
    nodes_used: int
    nodes_excluded: int

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_error_dt, self.max_rel_error_dx)


def representation_check(table: DerivTable, mask: np.ndarray | None = None,
                         threshold: float | None = None, h: float | None = None) -> RepresentationReport:
    """Rebuild d_t u and d_i u from (S u, H_j u, Omega u) off the light cone.

    Nodes need |t^2 - r^2| > threshold (default 0.1 <t>^2 h) and, if given,
    ``mask`` true.  Errors are relative to the largest stored derivative on
    the used nodes.
    """
    t = table.t
    x1, x2 = np.broadcast_arrays(np.asarray(table.x1, dtype=float), np.asarray(table.x2, dtype=float))
    r2 = x1**2 + x2**2
    if threshold is None:
        hh = h if h is not None else (table.grid.h if table.grid is not None else 1.0)
        threshold = 0.1 * (1.0 + t * t) * hh
    use = np.abs(t * t - r2) > threshold
    if mask is not None:
        use &= mask
    excluded = int(use.size - use.sum())
    if not np.any(use):
        raise ValueError("no nodes left off the light cone")
    Su = table.apply("S").value
    H1 = table.apply("H1").value
    H2 = table.apply("H2").value
    Om = table.apply("Om").value
    D = t * t - r2
    Ds = np.where(use, D, 1.0)
    rec_t = (t * Su - x1 * H1 - x2 * H2) / Ds
    rec_1 = (t * H1 - x1 * Su + x2 * Om) / Ds   # -(-1)^1 x_2 Omega
    rec_2 = (t * H2 - x2 * Su - x1 * Om) / Ds   # -(-1)^2 x_1 Omega
    dt, d1, d2 = table.d(0), table.d(1), table.d(2)
    scale = max(np.max(np.abs(np.stack([dt, d1, d2]))[:, use]), 1e-300)
    err_t = np.max(np.abs(rec_t - dt)[use]) / scale
    err_x = max(np.max(np.abs(rec_1 - d1)[use]), np.max(np.abs(rec_2 - d2)[use])) / scale

    # the two expressions for G_i, away from r = 0 and t = 0
    r = np.sqrt(r2)
    ok = use & (r > 0)
    mism = 0.0
    if t != 0 and np.any(ok):
        rs = np.where(ok, r, 1.0)
        for Hi, di, xi in ((H1, d1, x1), (H2, d2, x2)):
            ga = (Hi + (r - t) * di) / rs
            gb = (Hi - xi / rs * (r - t) * dt) / t
            mism = max(mism, np.max(np.abs(ga - gb)[ok]) / scale)
    return RepresentationReport(float(err_t), float(err_x), float(mism), int(use.sum()), excluded)


@dataclass(frozen=True)
class HessianReport:
    identity_residual: float
    identity_scale: float
    max_ratio: float
    nodes_used: int


def hessian_operator(table: DerivTable) -> np.ndarray:
    """Right-hand side of the rewriting of -box through d_t d_t, d_t H_i and d^i H_i."""
    t = table.t
    if t == 0:
        raise ValueError("the Hessian identity needs t != 0")
    x1, x2 = table.x1, table.x2
    r2 = x1**2 + x2**2
    H = [table.apply("H1"), table.apply("H2")]
    out = (t * t - r2) / (t * t) * table[(2, 0, 0)]
    out = out + (x1 * H[0].d(0) + x2 * H[1].d(0)) / (t * t)
    out = out - (H[0].d(1) + H[1].d(2)) / t
    out = out + 2.0 / t * table.d(0)
    out = out - (x1 * table.d(1) + x2 * table.d(2)) / (t * t)
    return out


def hessian_decay_check(state: FieldState, null: NullMode = "standard",
                        floor: float = 1e-6) -> HessianReport:
    """Identity residual and the extra-decay ratio for the wave component.

    The ratio ``|dd w| <t-r> / (sum_{|I|<=1} |d Gamma^I w| + t |F_w|)`` is
    taken over nodes with r <= 2t whose denominator exceeds ``floor``
    times its maximum (elsewhere both sides are at roundoff level).
    """
    t = state.t
    if t < 1:
        raise ValueError(f"the Hessian check needs t >= 1, got {t}")
    W, V, Fw, _ = time_levels(state, 3, null, with_forces=True)
    tab = table_from_levels(state.grid, t, W, 2)
    fw = Fw[0]
    op = hessian_operator(tab)
    region = state.grid.r <= 2 * t
    resid = float(np.max(np.abs(op - fw)[region]))
    scale = float(np.max(np.abs(fw)[region])) if np.any(region) else 0.0

    second = np.sqrt(sum(tab[_add(E[a], E[b])] ** 2 for a in range(3) for b in range(3)))

    def dnorm(tb):
        return np.sqrt(tb.d(0) ** 2 + tb.d(1) ** 2 + tb.d(2) ** 2)

    denom = dnorm(tab) + sum(dnorm(tab.apply(gen)) for gen in VECTOR_FIELDS) + t * np.abs(fw)
    numer = second * np.sqrt(1.0 + (t - state.grid.r) ** 2)
    use = region & (denom > floor * np.max(denom[region]))
    ratio = float(np.max(numer[use] / denom[use])) if np.any(use) else 0.0
    return HessianReport(resid, scale, ratio, int(use.sum()))

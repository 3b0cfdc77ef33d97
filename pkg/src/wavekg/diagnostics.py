"""Energies, weighted norms, ghost-weight accumulators, decay fits and monitors.

Every function here is a pure function of a snapshot except
:class:`Monitor`, whose time integrals (ghost weight, energy-estimate
source, Klein-Gordon source) are carried from record to record.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate as sint
from scipy import special

from .fields import FieldState
from .grid import Grid, integrate
from .nullforms import Jet, NullMode, decomposition_residual, nonlinearity, nullform_bound_ratio
from .vectorfields import (
    DerivTable,
    excluded_nodes,
    good_derivative,
    iter_word_tables,
    table_from_levels,
    time_levels,
    word_name,
)

DECAY_T_MIN = 5.0
MIN_FIT_POINTS = 10


class InsufficientDataError(ValueError):
    pass


class CapError(ValueError):
    pass


def japanese(x):
    """<x> = sqrt(1 + x^2)."""
    return np.sqrt(1.0 + np.square(x))


# ---------------------------------------------------------------------------
# energies

def _grad_sq(grid: Grid, u: np.ndarray) -> np.ndarray:
    fh = grid.fft(u)
    return grid.ifft(grid.ik1 * fh) ** 2 + grid.ifft(grid.ik2 * fh) ** 2


def energy_wave(grid: Grid, u: np.ndarray, ut: np.ndarray) -> float:
    """Standard energy: integral of u_t^2 + |grad u|^2."""
    grid.check(u, ut)
    return integrate(grid, ut**2 + _grad_sq(grid, u))


def energy_kg(grid: Grid, u: np.ndarray, ut: np.ndarray) -> float:
    """Klein-Gordon energy: the wave energy plus the integral of u^2."""
    grid.check(u, ut)
    return integrate(grid, ut**2 + _grad_sq(grid, u) + u**2)


def _table_energy(tab: DerivTable, mass: bool) -> float:
    dens = tab.d(0) ** 2 + tab.d(1) ** 2 + tab.d(2) ** 2
    if mass:
        dens = dens + tab.value**2
    return integrate(tab.grid, dens)


def _as_table(jet: Jet | DerivTable, t: float | None) -> DerivTable:
    if isinstance(jet, DerivTable):
        return jet
    if jet.grid is None or t is None:
        raise ValueError("a bare jet needs its grid and the time t")
    g = jet.grid
    ent = {(0, 0, 0): jet.value, (1, 0, 0): jet.dt, (0, 1, 0): jet.d1, (0, 0, 1): jet.d2}
    ent = {k: np.broadcast_to(np.asarray(v, dtype=float), g.shape) for k, v in ent.items()}
    return DerivTable(1, float(t), g.x1, g.x2, ent, g)


def conformal_energy(jet: Jet | DerivTable, t: float | None = None) -> float:
    """Integral of (S u + u)^2 + (Omega u)^2 + (H_1 u)^2 + (H_2 u)^2."""
    tab = _as_table(jet, t).truncate(1)
    dens = (tab.apply("S").value + tab.value) ** 2 + tab.apply("Om").value ** 2
    dens = dens + tab.apply("H1").value ** 2 + tab.apply("H2").value ** 2
    return integrate(tab.grid, dens)


# ---------------------------------------------------------------------------
# ghost weight

@functools.cache
def ghost_q_reference() -> float:
    """q(t, t): the integral of <s>^(-3/2) over (-inf, 0], by adaptive quadrature."""
    val, _ = sint.quad(lambda s: (1.0 + s * s) ** -0.75, -np.inf, 0.0, epsabs=1e-14, epsrel=1e-13)
    return float(val)


def ghost_q(t: float, r) -> np.ndarray:
    """q(t, r) = integral of <s>^(-3/2) over (-inf, r - t]."""
    z = np.asarray(r, dtype=float) - t
    # the integral from 0 to z is z 2F1(1/2, 3/4; 3/2; -z^2)
    return ghost_q_reference() + z * special.hyp2f1(0.5, 0.75, 1.5, -z * z)


def ghost_q_max() -> float:
    return 2.0 * ghost_q_reference()


def ghost_constant() -> float:
    """Zero-source constant kappa in sum_i A_i <= kappa (E_1(0) + 2 int <s>^-d0 |f| |u_t|)."""
    return 2.0 * math.exp(ghost_q_max())


def ghost_integrand(tab: DerivTable, delta0: float) -> tuple[float, float]:
    """<t>^(-d0) integral of (u^2 + |G_i u|^2) / <r - t>^(3/2) for i = 1, 2."""
    g = tab.grid
    t = tab.t
    w = japanese(g.r - t) ** -1.5
    jet = tab.jet()
    base = tab.value**2
    out = []
    for i in (1, 2):
        gi, _ = good_derivative(i, jet)
        out.append(float(japanese(t) ** -delta0 * integrate(g, (base + gi**2) * w)))
    return out[0], out[1]


def ghost_accumulate(prev: dict, integrands: dict, dt: float) -> dict:
    """Trapezoid update of ``{key: (accum, last integrand)}`` by ``dt``."""
    if dt < 0:
        raise ValueError("ghost accumulation needs a nonnegative time step")
    out = {}
    for key, val in integrands.items():
        if val < 0:
            raise ValueError(f"negative ghost integrand for {key}")
        acc, last = prev.get(key, (0.0, None))
        acc = acc if last is None else acc + 0.5 * dt * (last + val)
        out[key] = (acc, val)
    return out


# ---------------------------------------------------------------------------
# sup-type quantities

def _dnorm(tab: DerivTable) -> np.ndarray:
    return np.max(np.abs(np.stack([tab.d(0), tab.d(1), tab.d(2)])), axis=0)


def weighted_sup_dw(tab: DerivTable, skip_excluded: bool = True) -> float:
    """max over nodes of <t - r>^(3/4) <t>^(1/2) |d u|, with |d u| the largest component."""
    g = tab.grid
    val = japanese(tab.t - g.r) ** 0.75 * japanese(tab.t) ** 0.5 * _dnorm(tab)
    if skip_excluded:
        val = np.where(excluded_nodes(g), 0.0, val)
    return float(np.max(val))


def sobolev_ratio(tab: DerivTable, cap: int = 3) -> float:
    """sup|u| <t>^(1/2) / sum over |I| <= 3 of ||Gamma^I u||_{L^2}.

    Returns 0.0 for the zero field.
    """
    if cap < 3 or tab.order < 3:
        raise CapError("the Sobolev ratio needs order cap 3 and a table of order >= 3")
    g = tab.grid
    total = 0.0
    for _, (tb,) in iter_word_tables([tab.truncate(3)], 3):
        total += math.sqrt(integrate(g, tb.value**2))
    if total == 0.0:
        return 0.0
    return float(np.max(np.abs(tab.value)) * math.sqrt(1.0 + tab.t**2) / total)


# ---------------------------------------------------------------------------
# decay fits

@dataclass(frozen=True)
class DecayFit:
    t_min: float
    t_max: float
    slope: float
    intercept: float
    r2: float
    samples: int

    def to_dict(self) -> dict:
        return {"window": [self.t_min, self.t_max], "slope": self.slope,
                "intercept": self.intercept, "r2": self.r2, "samples": self.samples}


def fit_decay(times: Sequence[float], values: Sequence[float],
              window: tuple[float, float] | None = None,
              enforce_t_min: bool = True) -> DecayFit:
    """Least-squares slope of log(value) against log(t) on the window."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    lo, hi = window if window is not None else (DECAY_T_MIN, float(np.max(t)))
    if enforce_t_min and lo < DECAY_T_MIN:
        raise ValueError(f"decay windows must start at t >= {DECAY_T_MIN}, got {lo}")
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if sel.sum() < MIN_FIT_POINTS:
        raise InsufficientDataError(f"need {MIN_FIT_POINTS} samples in [{lo}, {hi}], got {int(sel.sum())}")
    if np.any(v[sel] <= 0):
        raise ValueError("decay fits need positive values")
    x, y = np.log(t[sel]), np.log(v[sel])
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else 1.0
    return DecayFit(float(t[sel].min()), float(t[sel].max()), float(slope), float(icpt), r2, int(sel.sum()))


# ---------------------------------------------------------------------------
# per-snapshot bundle

@dataclass
class DiagnosticsRecord:
    """One output row.  ``values`` keeps insertion order, which is the CSV order."""

    t: float
    values: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.t if key == "t" else self.values[key]

    def columns(self) -> list[str]:
        return ["t"] + list(self.values)

    def row(self) -> list[float]:
        return [self.t] + list(self.values.values())

    def check_finite(self) -> None:
        bad = [k for k, v in self.values.items() if not math.isfinite(v)]
        if bad or not math.isfinite(self.t):
            raise ValueError(f"non-finite diagnostics at t={self.t}: {bad}")


BOOT_LINES = ("boot_w_sup", "boot_w_energy", "boot_w_energy_top", "boot_w_S", "boot_w_L2",
              "boot_w_weighted", "boot_v_sup", "boot_v_energy", "boot_v_energy_top", "boot_v_ghost")


def bootstrap_report(t: float, per_word: dict, cap: int, delta: float) -> dict[str, float]:
    """Bootstrap left-hand sides divided by their growth powers of <t>.

    ``per_word`` maps each word to the quantities computed by
    :meth:`Monitor.snapshot` (``E_w``, ``E1_v``, ``S_w``, ``L2_w``,
    ``wsup_dw``, ``sup_tr_v``, ``ghost``); ``S_w`` is only read for
    |I| <= cap - 1.
    """
    jt = math.sqrt(1.0 + t * t)
    out = dict.fromkeys(BOOT_LINES, 0.0)
    for word, q in per_word.items():
        low = len(word) <= cap - 1
        if len(word) == 0:
            out["boot_w_sup"] = jt**0.5 * q["sup_w"]
        if low:
            out["boot_w_energy"] += math.sqrt(q["E_w"])
            out["boot_w_S"] += jt ** (-0.5 - 2 * delta) * q["S_w"]
            out["boot_v_energy"] += math.sqrt(q["E1_v"])
        out["boot_w_energy_top"] += jt**-delta * math.sqrt(q["E_w"])
        out["boot_w_L2"] += jt**-delta * q["L2_w"]
        out["boot_w_weighted"] += q["wsup_dw"]
        out["boot_v_sup"] += q["sup_tr_v"]
        out["boot_v_energy_top"] += jt**-delta * math.sqrt(q["E1_v"])
        out["boot_v_ghost"] += jt**-delta * q["ghost"]
    return out


class Monitor:
    """Record callback computing a :class:`DiagnosticsRecord` per snapshot.

    Time integrals are advanced by the trapezoid rule between records, so
    their accuracy follows the record cadence.  ``state_dict`` and
    ``load_state_dict`` carry them across checkpoints.
    """

    def __init__(self, cap: int = 2, delta: float = 0.05, delta0: float = 0.1,
                 null: NullMode = "standard", sobolev: bool = False,
                 identities: bool = True, horizon: float | None = None, tracker=None):
        if cap < 0 or cap > 3:
            raise CapError(f"order cap must be between 0 and 3, got {cap}")
        if sobolev and cap < 2:
            raise CapError("the Sobolev ratio needs order cap >= 2 tables")
        self.cap = cap
        self.delta = delta
        self.delta0 = delta0
        self.null = null
        self.sobolev = sobolev
        self.identities = identities
        self.horizon = horizon
        self.tracker = tracker
        self.records: list[DiagnosticsRecord] = []
        self._acc: dict = {}          # ghost accumulators, keyed "word|i"
        self._src: dict = {}          # int <s>^-d0 ||Gamma^I F_v|| ||d_t Gamma^I v||
        self._ee: tuple = (0.0, None)  # int ||F_w||
        self._t_last: float | None = None
        self._E1_0: dict = {}
        self._E_0: float | None = None

    # persistence ---------------------------------------------------------
    def state_dict(self) -> dict:
        return {"acc": {k: list(v) for k, v in self._acc.items()},
                "src": {k: list(v) for k, v in self._src.items()},
                "ee": list(self._ee), "t_last": self._t_last,
                "E1_0": self._E1_0, "E_0": self._E_0}

    def load_state_dict(self, d: dict) -> None:
        self._acc = {k: tuple(v) for k, v in d["acc"].items()}
        self._src = {k: tuple(v) for k, v in d["src"].items()}
        self._ee = tuple(d["ee"])
        self._t_last = d["t_last"]
        self._E1_0 = dict(d["E1_0"])
        self._E_0 = d["E_0"]

    # main entry ----------------------------------------------------------
    def __call__(self, state: FieldState) -> DiagnosticsRecord:
        rec = self.snapshot(state)
        rec.check_finite()
        self.records.append(rec)
        return rec

    def snapshot(self, state: FieldState) -> DiagnosticsRecord:
        g = state.grid
        t = state.t
        if self._t_last is not None and not t > self._t_last:
            raise ValueError(f"record times must increase: {t} after {self._t_last}")
        dt_rec = 0.0 if self._t_last is None else t - self._t_last
        order = self.cap + 1
        W, V, Fw, Fv = time_levels(state, order + 1, self.null, with_forces=True)
        tw = table_from_levels(g, t, W, max(order, 3 if self.sobolev else order))
        tv = table_from_levels(g, t, V, max(order, 3 if self.sobolev else order))
        tf = table_from_levels(g, t, Fv, self.cap)
        jt = math.sqrt(1.0 + t * t)
        vals: dict[str, float] = {}
        vals["beyond_horizon"] = float(self.horizon is not None and t > self.horizon + 1e-12)
        vals["sup_w"] = float(np.max(np.abs(state.w)))
        vals["sup_v"] = float(np.max(np.abs(state.v)))
        vals["sup_dw_weighted"] = weighted_sup_dw(tw)

        # energy estimate monitor for w
        fw_norm = math.sqrt(integrate(g, Fw[0] ** 2))
        acc_ee, last_ee = self._ee
        acc_ee = acc_ee if last_ee is None else acc_ee + 0.5 * dt_rec * (last_ee + fw_norm)
        self._ee = (acc_ee, fw_norm)
        E_w = energy_wave(g, state.w, state.wt)
        if self._E_0 is None:
            self._E_0 = E_w
        bound = math.sqrt(self._E_0) + 2.0 * acc_ee
        vals["energy_estimate_ratio"] = math.sqrt(E_w) / bound if bound > 0 else 0.0

        per_word = {}
        integrands = {}
        src_int = {}
        cols_E, cols_E1, cols_G, cols_gh, cols_ws = {}, {}, {}, {}, {}
        for word, (a, b, f) in iter_word_tables([tw.truncate(order), tv.truncate(order), tf], self.cap):
            name = word_name(word)
            q = {"sup_w": float(np.max(np.abs(a.value)))}
            q["E_w"] = _table_energy(a, False)
            q["E1_v"] = _table_energy(b, True)
            q["L2_w"] = math.sqrt(integrate(g, a.value**2))
            q["S_w"] = math.sqrt(integrate(g, a.apply("S").value ** 2)) if len(word) < self.cap else 0.0
            q["wsup_dw"] = weighted_sup_dw(a)
            q["sup_tr_v"] = float(np.max(japanese(t + g.r) * np.abs(b.value)))
            g1, g2 = ghost_integrand(b, self.delta0)
            integrands[name + "|1"] = g1
            integrands[name + "|2"] = g2
            src_int[name] = jt**-self.delta0 * math.sqrt(integrate(g, f.value**2)) \
                * math.sqrt(integrate(g, b.d(0) ** 2))
            cols_E[f"E_w[{name}]"] = q["E_w"]
            cols_E1[f"E1_v[{name}]"] = q["E1_v"]
            cols_G[f"conformal_G_w[{name}]"] = conformal_energy(a)
            cols_ws[f"wsup_dw[{name}]"] = q["wsup_dw"]
            if name not in self._E1_0:
                self._E1_0[name] = q["E1_v"]
            per_word[word] = q

        self._acc = ghost_accumulate(self._acc, integrands, dt_rec)
        self._src = ghost_accumulate(self._src, src_int, dt_rec)
        kappa = ghost_constant()
        worst = 0.0
        rhs_all = {word_name(w): kappa * (self._E1_0[word_name(w)] + 2.0 * self._src[word_name(w)][0])
                   for w in per_word}
        # words whose data and source vanish carry only roundoff on both sides
        floor = 1e-12 * max(rhs_all.values(), default=0.0)
        for word, q in per_word.items():
            name = word_name(word)
            a1 = self._acc[name + "|1"][0]
            a2 = self._acc[name + "|2"][0]
            cols_gh[f"ghost_v[{name}|1]"] = a1
            cols_gh[f"ghost_v[{name}|2]"] = a2
            q["ghost"] = a1 + a2
            rhs = rhs_all[name]
            if rhs > floor:
                worst = max(worst, (a1 + a2) / rhs)
        vals["ghost_bound_ratio"] = worst
        for cols in (cols_E, cols_E1, cols_G, cols_gh, cols_ws):
            vals.update(cols)
        vals.update(bootstrap_report(t, per_word, self.cap, self.delta))

        if self.sobolev:
            vals["sobolev_ratio_w"] = sobolev_ratio(tw)
            vals["sobolev_ratio_v"] = sobolev_ratio(tv)
        excluded = int(excluded_nodes(g).sum())
        if self.identities:
            N = nonlinearity(state.couplings.C1, state.couplings.C1ab,
                             *_jets(tw, tv), dealiased=False)
            scale = float(np.max(np.abs(N)))
            res = decomposition_residual(state)
            vals["decomposition_residual"] = res / scale if scale > 0 else res
            ratio, excl = nullform_bound_ratio(state)
            vals["nullform_bound_ratio"] = ratio
            excluded = max(excluded, excl)
        if self.tracker is not None:
            vals["reconstruction_residual"] = self.tracker.residual(state)
        vals["excluded_node_count"] = float(excluded)
        self._t_last = t
        return DiagnosticsRecord(float(t), vals)


def _jets(tw: DerivTable, tv: DerivTable) -> tuple[Jet, Jet]:
    return tw.jet(), tv.jet()


# ---------------------------------------------------------------------------
# output

def _fmt(x: float) -> str:
    return repr(float(x))


def records_to_csv(records: Sequence[DiagnosticsRecord]) -> str:
    """CSV text with a header row; floats written with repr so they round-trip."""
    if not records:
        return ""
    cols = records[0].columns()
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for rec in records:
        if rec.columns() != cols:
            raise ValueError(f"record at t={rec.t} has different columns")
        wr.writerow([_fmt(x) for x in rec.row()])
    return buf.getvalue()


def write_csv(path: str | Path, records: Sequence[DiagnosticsRecord], append: bool = False) -> None:
    text = records_to_csv(records)
    path = Path(path)
    if append and path.exists():
        text = text.split("\n", 1)[1] if text else ""
        with open(path, "a", newline="") as fh:
            fh.write(text)
        return
    path.write_text(text)


def read_csv(path: str | Path) -> list[DiagnosticsRecord]:
    return parse_csv(Path(path).read_text())


def parse_csv(text: str) -> list[DiagnosticsRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    head = rows[0]
    return [DiagnosticsRecord(float(r[0]), {k: float(v) for k, v in zip(head[1:], r[1:])})
            for r in rows[1:]]


def series(records: Sequence[DiagnosticsRecord], key: str) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([r.t for r in records]), np.array([r[key] for r in records]))


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def plot_loglog(path: str | Path, t: np.ndarray, y: np.ndarray, label: str,
                fit: DecayFit | None = None) -> None:
    """Static SVG of value against t on log axes, with the fitted slope if given."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sel = (t > 0) & (y > 0)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.loglog(t[sel], y[sel], "o-", ms=2, lw=1, label=label)
    if fit is not None:
        tt = np.linspace(fit.t_min, fit.t_max, 50)
        ax.loglog(tt, np.exp(fit.intercept) * tt**fit.slope, "--", lw=1,
                  label=f"slope {fit.slope:.3f}")
    ax.set_xlabel("t")
    ax.set_ylabel(label)
    ax.legend(fontsize=8)
    fig.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": "wavekg"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def summarize_fits(records: Sequence[DiagnosticsRecord], keys: Iterable[str],
                   window: tuple[float, float]) -> dict:
    out = {}
    for key in keys:
        t, y = series(records, key)
        try:
            out[key] = fit_decay(t, y, window).to_dict()
        except (InsufficientDataError, ValueError) as exc:
            out[key] = {"error": str(exc)}
    return out

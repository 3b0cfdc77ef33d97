"""Time evolution: exact Fourier linear flows, Strang stepping, oracles."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Protocol

import numpy as np
from scipy import integrate as sint

from .fields import BlowUpError, FieldState
from .grid import Grid, gradient
from .nullforms import Jet, NullMode, divergence_decomposition, nonlinearity

log = logging.getLogger(__name__)


class QuadratureError(RuntimeError):
    pass


class CallbackError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# linear flows

def _multipliers(kk: np.ndarray, t: float):
    """cos(t k), sin(t k)/k (limit t at k = 0) and -k sin(t k)."""
    c = np.cos(t * kk)
    s = np.sin(t * kk)
    safe = np.where(kk > 0, kk, 1.0)
    sinc = np.where(kk > 0, s / safe, t)
    return c, sinc, -kk * s


@dataclass(frozen=True, eq=False)
class Propagator:
    """Multiplier tables for one grid and one time step."""

    grid: Grid
    dt: float
    cos_w: np.ndarray = field(repr=False)
    sinc_w: np.ndarray = field(repr=False)
    ksin_w: np.ndarray = field(repr=False)
    cos_kg: np.ndarray = field(repr=False)
    sinc_kg: np.ndarray = field(repr=False)
    ksin_kg: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, grid: Grid, dt: float) -> "Propagator":
        cw, sw, kw = _multipliers(grid.kabs, dt)
        ck, sk, kk = _multipliers(np.sqrt(1.0 + grid.ksq), dt)
        return cls(grid, dt, cw, sw, kw, ck, sk, kk)

    def wave(self, u, ut):
        return _apply_flow(self.grid, u, ut, self.cos_w, self.sinc_w, self.ksin_w)

    def kg(self, u, ut):
        return _apply_flow(self.grid, u, ut, self.cos_kg, self.sinc_kg, self.ksin_kg)


@lru_cache(maxsize=16)
def _cached_propagator(grid: Grid, dt: float) -> Propagator:
    return Propagator.build(grid, dt)


def propagator(grid: Grid, dt: float) -> Propagator:
    return _cached_propagator(grid, float(dt))


def _apply_flow(grid: Grid, u, ut, c, s, ks):
    uh = grid.fft(u)
    uth = grid.fft(ut)
    return grid.ifft(c * uh + s * uth), grid.ifft(ks * uh + c * uth)


def linear_flow_wave(grid: Grid, u: np.ndarray, ut: np.ndarray, t: float):
    """Free wave evolution by the Fourier solution formula."""
    c, s, ks = _multipliers(grid.kabs, t)
    return _apply_flow(grid, u, ut, c, s, ks)


def linear_flow_kg(grid: Grid, u: np.ndarray, ut: np.ndarray, t: float):
    """Free Klein-Gordon evolution with symbol sqrt(1 + |k|^2)."""
    c, s, ks = _multipliers(np.sqrt(1.0 + grid.ksq), t)
    return _apply_flow(grid, u, ut, c, s, ks)


# ---------------------------------------------------------------------------
# Strang stepper

def _kick(state: FieldState, tau: float, null: NullMode):
    """Integrate d(wt, vt)/ds = (F_w, F_v) over s in [0, tau] with w, v frozen.

    F depends on the velocities through Q_0 and Q_{0i}, so the sub-flow is
    integrated with the explicit midpoint rule.
    """
    c = state.couplings
    g = state.grid
    w1, w2 = gradient(g, state.w)
    v1, v2 = gradient(g, state.v)

    def forces(wt, vt):
        wj = Jet(state.w, wt, w1, w2, g)
        vj = Jet(state.v, vt, v1, v2, g)
        fw = nonlinearity(c.C1, c.C1ab, wj, vj, True, null) if not c.wave_is_linear else 0.0
        fv = nonlinearity(c.C2, c.C2ab, wj, vj, True, null)
        return fw, fv

    fw, fv = forces(state.wt, state.vt)
    fw, fv = forces(state.wt + 0.5 * tau * fw, state.vt + 0.5 * tau * fv)
    return state.wt + tau * fw, state.vt + tau * fv


def step(state: FieldState, dt: float, null: NullMode = "standard",
         t_new: float | None = None) -> FieldState:
    """Advance by ``dt`` with half kick, exact linear flow, half kick.

    A negative ``dt`` steps backwards.  ``t_new`` overrides the stamped
    time (the run loop passes ``n * dt`` to avoid accumulated rounding).
    """
    if dt == 0:
        raise ValueError("dt must be nonzero")
    prop = propagator(state.grid, dt)
    linear = state.couplings.is_linear
    if not linear:
        wt, vt = _kick(state, 0.5 * dt, null)
        state = state.with_fields(state.t, state.w, wt, state.v, vt)
    w, wt = prop.wave(state.w, state.wt)
    v, vt = prop.kg(state.v, state.vt)
    out = state.with_fields(state.t + dt if t_new is None else t_new, w, wt, v, vt)
    if not linear:
        wt, vt = _kick(out, 0.5 * dt, null)
        out = out.with_fields(out.t, w, wt, v, vt)
    out.check_finite()
    return out


# ---------------------------------------------------------------------------
# run loop

class StepObserver(Protocol):
    def __call__(self, index: int, state: FieldState) -> None: ...


@dataclass
class RunResult:
    final: FieldState
    records: list
    steps: int
    beyond_horizon: bool = False


def run(state0: FieldState, dt: float, T: float,
        record_every: float | None = None,
        on_record: Callable[[FieldState], object] | None = None,
        on_step: Iterable[StepObserver] = (),
        checkpoint_every: float | None = None,
        on_checkpoint: Callable[[int, FieldState], None] | None = None,
        null: NullMode = "standard",
        horizon: float | None = None,
        start_index: int = 0,
        t0: float = 0.0) -> RunResult:
    """Evolve to time ``T`` and collect whatever ``on_record`` returns.

    Times are stamped as ``t0 + n * dt`` from the global step index ``n``,
    so a run resumed at ``start_index`` reproduces the uninterrupted one.
    The record at the starting time is emitted only when ``start_index``
    is zero.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n_total = _whole_steps(T - t0, dt, "T")
    per_record = _whole_steps(record_every, dt, "record_every") if record_every else None
    per_ckpt = _whole_steps(checkpoint_every, dt, "checkpoint_every") if checkpoint_every else None
    if horizon is not None and T > horizon:
        log.warning("T = %g exceeds the safe horizon %g; records past it are annotated", T, horizon)

    records = []

    def emit(state):
        if on_record is None:
            return
        try:
            rec = on_record(state)
        except BlowUpError:
            raise
        except Exception as exc:  # noqa: BLE001 - wrapped with context
            raise CallbackError(f"record callback failed at t={state.t}: {exc}") from exc
        if rec is not None:
            records.append(rec)

    state = state0
    observers = list(on_step)
    if start_index == 0:
        for obs in observers:
            obs(0, state)
        emit(state)
    for idx in range(start_index + 1, n_total + 1):
        state = step(state, dt, null, t_new=t0 + idx * dt)
        for obs in observers:
            obs(idx, state)
        if per_record and idx % per_record == 0:
            emit(state)
        if per_ckpt and on_checkpoint is not None and idx % per_ckpt == 0:
            on_checkpoint(idx, state)
    beyond = horizon is not None and state.t > horizon
    return RunResult(state, records, n_total, beyond)


def _whole_steps(span: float, dt: float, name: str) -> int:
    q = span / dt
    k = int(round(q))
    if k < 0 or abs(q - k) > 1e-9 * max(1.0, abs(q)):
        raise ValueError(f"{name} = {span} is not a whole number of steps of dt = {dt}")
    return k


# ---------------------------------------------------------------------------
# forced linear waves and the auxiliary decomposition system

def forced_wave_step(prop: Propagator, u, ut, s_start, s_end):
    """One Strang step of u_tt = lap u + s with s sampled at both ends."""
    h = 0.5 * prop.dt
    u, ut = prop.wave(u, ut + h * s_start)
    return u, ut + h * s_end


def evolve_forced_wave(grid: Grid, u0, u1, source: Callable[[float], np.ndarray],
                       dt: float, T: float):
    """Evolve u_tt = lap u + source(t) from (u0, u1) at t = 0 to T."""
    prop = propagator(grid, dt)
    n = _whole_steps(T, dt, "T")
    u, ut = np.array(u0, dtype=float), np.array(u1, dtype=float)
    s_prev = source(0.0)
    for i in range(1, n + 1):
        s_next = source(i * dt)
        u, ut = forced_wave_step(prop, u, ut, s_prev, s_next)
        s_prev = s_next
    return u, ut


AUX_NAMES = ("Y0", "Y1", "Psi0", "Psi1", "Psi2", "Phi0", "Phi1", "Phi2")


@dataclass
class AuxiliaryStates:
    """Wave fields of the decomposition, each stored as (value, time derivative)."""

    t: float
    fields: dict[str, tuple[np.ndarray, np.ndarray]]
    co_evolved: bool = True
    velocity_correction: np.ndarray | None = None

    def reconstruction(self, grid: Grid) -> np.ndarray:
        """Y0 + Y1 + d^a Psi_a + d_a Phi^a."""
        f = self.fields
        out = f["Y0"][0] + f["Y1"][0]
        out = out - f["Psi0"][1] + f["Phi0"][1]
        out = out + gradient(grid, f["Psi1"][0] + f["Phi1"][0])[0]
        out = out + gradient(grid, f["Psi2"][0] + f["Phi2"][0])[1]
        return out

    def to_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name in AUX_NAMES:
            u, ut = self.fields[name]
            out += [(name, u), (name + "_t", ut)]
        return out

    @classmethod
    def from_arrays(cls, t: float, arrays: dict[str, np.ndarray]) -> "AuxiliaryStates":
        return cls(t, {name: (arrays[name], arrays[name + "_t"]) for name in AUX_NAMES})


def _aux_sources(state: FieldState) -> dict[str, np.ndarray]:
    dec = divergence_decomposition(state)
    zero = np.zeros(state.grid.shape)
    src = {"Y0": zero, "Y1": dec.G}
    for a in range(3):
        src[f"Psi{a}"] = dec.F[a]
        src[f"Phi{a}"] = dec.H[a]
    return src


def initial_auxiliary(state0: FieldState, velocity_correction: bool = True) -> AuxiliaryStates:
    """Zero data for every piece except Y0, which starts from (w0, w1).

    With zero data for Psi_a and Phi^a, the sum d^a Psi_a + d_a Phi^a has
    initial velocity H^0(0) - F_0(0), so (w0, w1) alone does not make the
    decomposition exact.  ``velocity_correction`` moves F_0(0) - H^0(0)
    into the velocity of Y0, restoring exactness.
    """
    zero = np.zeros(state0.grid.shape)
    corr = None
    y0t = state0.wt.copy()
    if velocity_correction:
        dec = divergence_decomposition(state0)
        corr = dec.F[0] - dec.H[0]
        y0t = y0t + corr
    fields = {name: (zero.copy(), zero.copy()) for name in AUX_NAMES}
    fields["Y0"] = (state0.w.copy(), y0t)
    return AuxiliaryStates(state0.t, fields, True, corr)


class DecompositionTracker:
    """Advances the auxiliary system in lockstep with the main run.

    Use as an ``on_step`` observer.  Sources are sampled at the step end
    points, the same states at which the main stepper kicks.
    """

    def __init__(self, state0: FieldState, dt: float, velocity_correction: bool = True,
                 aux: AuxiliaryStates | None = None, last_index: int = 0):
        self.grid = state0.grid
        self.prop = propagator(self.grid, dt)
        self.aux = aux if aux is not None else initial_auxiliary(state0, velocity_correction)
        self._sources = _aux_sources(state0)
        self._last = last_index

    def __call__(self, index: int, state: FieldState) -> None:
        if index == self._last:
            self._sources = _aux_sources(state)
            return
        if index != self._last + 1:
            raise RuntimeError(f"decomposition tracker skipped from step {self._last} to {index}")
        new = _aux_sources(state)
        fields = {}
        for name, (u, ut) in self.aux.fields.items():
            fields[name] = forced_wave_step(self.prop, u, ut, self._sources[name], new[name])
        self.aux = AuxiliaryStates(state.t, fields, True, self.aux.velocity_correction)
        self._sources = new
        self._last = index

    def residual(self, state: FieldState) -> float:
        """Relative sup-norm mismatch between w and its reconstruction."""
        if abs(self.aux.t - state.t) > 1e-12 * max(1.0, state.t):
            raise RuntimeError("auxiliary fields are not at the state's time")
        scale = np.max(np.abs(state.w))
        diff = np.max(np.abs(state.w - self.aux.reconstruction(self.grid)))
        return float(diff / scale) if scale > 0 else float(diff)


def evolve_decomposition(state0: FieldState, dt: float, T: float,
                         null: NullMode = "standard", velocity_correction: bool = True,
                         record_every: float | None = None):
    """Run the main system and the auxiliary system together.

    Returns ``(final_state, final_aux, trajectory)`` where ``trajectory``
    lists ``(t, relative reconstruction residual)`` at each record time.
    """
    tracker = DecompositionTracker(state0, dt, velocity_correction)
    traj = []

    def on_record(state):
        traj.append((state.t, tracker.residual(state)))

    res = run(state0, dt, T, record_every=record_every or T, on_record=on_record,
              on_step=[tracker], null=null)
    return res.final, tracker.aux, traj


# ---------------------------------------------------------------------------
# closed-form oracles

def duhamel_fourier(grid: Grid, source_hat: Callable[[float], np.ndarray], t: float,
                    epsabs: float = 1e-13, epsrel: float = 1e-11) -> np.ndarray:
    """Zero-data forced wave at time t from the Duhamel integral in Fourier space.

    ``source_hat(s)`` returns the rfft2 half-spectrum of the source at time s.
    """
    kk = grid.kabs

    def integrand(s):
        _, sinc, _ = _multipliers(kk, t - s)
        fh = source_hat(s)
        return np.concatenate([(sinc * fh.real).ravel(), (sinc * fh.imag).ravel()])

    vals, _ = sint.quad_vec(integrand, 0.0, t, epsabs=epsabs, epsrel=epsrel)
    half = vals.size // 2
    uh = (vals[:half] + 1j * vals[half:]).reshape(kk.shape)
    return grid.ifft(uh)


def _nested_quad(func, tol: float, limit: int = 200) -> float:
    """Integrate func(phi, theta) over [0, pi/2] x [0, 2 pi]."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", sint.IntegrationWarning)
        try:
            val, err = sint.dblquad(lambda phi, th: func(phi, th), 0.0, 2 * math.pi,
                                    0.0, 0.5 * math.pi, epsabs=tol, epsrel=0.0)
        except sint.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from exc
    if not np.isfinite(val):
        raise QuadratureError("non-finite quadrature result")
    return val


def oracle_pointwise_wave(u1: Callable[[float, float], float] | None, t: float,
                          x: tuple[float, float],
                          u0: Callable[[float, float], float] | None = None,
                          grad_u0: Callable[[float, float], tuple[float, float]] | None = None,
                          tol: float = 1e-8) -> float:
    """Free 2D wave at (t, x) from the singular-kernel representation.

    The velocity term is ``(1/2pi) int_{B(x,t)} u1(y) / sqrt(t^2 - |x-y|^2) dy``.
    In polar coordinates about x with radius ``t sin(phi)`` the square-root
    singularity cancels and the integrand becomes ``t sin(phi) u1(...)``.
    The position term is the t-derivative of the same kernel applied to
    ``u0``, differentiated analytically after rescaling the ball to B(0, 1).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return float(u0(*x)) if u0 is not None else 0.0
    x1, x2 = map(float, x)
    total = 0.0
    if u1 is not None:
        def f1(phi, th):
            rho = t * math.sin(phi)
            return t * math.sin(phi) * u1(x1 + rho * math.cos(th), x2 + rho * math.sin(th))
        total += _nested_quad(f1, tol * 2 * math.pi) / (2 * math.pi)
    if u0 is not None:
        grad = grad_u0 or _fd_gradient(u0)

        def f2(phi, th):
            s = math.sin(phi)
            c, sn = math.cos(th), math.sin(th)
            y1, y2 = x1 - t * s * c, x2 - t * s * sn
            g1, g2 = grad(y1, y2)
            # I21 + I22 after y -> x - t y on the unit ball
            return s * u0(y1, y2) - t * s * s * (c * g1 + sn * g2)
        total += _nested_quad(f2, tol * 2 * math.pi) / (2 * math.pi)
    return total


def _fd_gradient(f, h: float = 1e-3):
    def grad(a, b):
        def d(fp, fm, fp2, fm2):
            return (8 * (fp - fm) - (fp2 - fm2)) / (12 * h)
        g1 = d(f(a + h, b), f(a - h, b), f(a + 2 * h, b), f(a - 2 * h, b))
        g2 = d(f(a, b + h), f(a, b - h), f(a, b + 2 * h), f(a, b - 2 * h))
        return g1, g2
    return grad

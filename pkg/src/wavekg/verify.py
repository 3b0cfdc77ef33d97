"""Check batteries behind ``wavekg verify``.

Each suite returns a list of :class:`~wavekg.runner.Check` objects with
the measured value and its threshold.
"""
from __future__ import annotations

import math

import numpy as np

from .config import RunConfig, preset
from .fields import Bump, CouplingTensors, InitialDataSpec, build_initial_state
from .grid import make_grid
from .nullforms import decomposition_residual
from .propagate import evolve_decomposition, linear_flow_kg, linear_flow_wave, oracle_pointwise_wave, run
from .runner import GROWTH_FACTOR, Check, growth_ratio, simulate
from .vectorfields import (
    VECTOR_FIELDS,
    commutator_residual,
    commutator_span_residual,
    hessian_operator,
    representation_check,
    state_tables,
    table_from_sympy,
    time_levels,
    table_from_levels,
)

SUITES = ("identities", "oracles", "decay")

IDENTITY_TOL = 1e-8
REPRESENTATION_TOL = 1e-6
G_FORMS_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-6
ORACLE_MULTIPLIER_TOL = 1e-10
ORACLE_KERNEL_TOL = 1e-5
SLOPE_TARGETS = {"sup_v": (-1.0, 0.15), "sup_w": (-0.5, 0.10)}

DEFAULT_COUPLINGS = CouplingTensors(
    1.0, 1.0,
    np.array([[0.0, 0.5, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]),
    np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]]))


def default_data(eps: float = 1e-3, width: float = 2.0) -> InitialDataSpec:
    """Gaussians in all four data slots, the w bump slightly off center."""
    return InitialDataSpec(bumps=(
        Bump("w", eps, (1.0, 0.0), width),
        Bump("w", eps, (0.0, 0.0), width, velocity=True),
        Bump("v", eps, (0.0, 0.5), width),
        Bump("v", eps, (0.0, 0.0), width, velocity=True),
    ))


def _le(name: str, value: float, threshold: float) -> Check:
    return Check(name, bool(value < threshold), float(value), float(threshold))


# ---------------------------------------------------------------------------
# identities

def polynomial_test(t: float = 1.3, nodes: int = 64, seed: int = 0):
    """Exact table of a cubic polynomial at random nodes."""
    import sympy as sp

    ts, a, b = sp.symbols("t x1 x2")
    expr = 2 * ts**3 - ts**2 * a + 3 * a * b * ts - b**3 + a**2 * b + ts * b**2 - 4 * a + 1
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-5, 5, nodes)
    x2 = rng.uniform(-5, 5, nodes)
    return table_from_sympy(expr, (ts, a, b), t, x1, x2, 4), float(np.max(np.abs(x1)) + 10)


def spectral_test(t: float = 0.7, n: int = 128, L: float = 16.0, order: int = 4):
    """Gaussian times cos(k.x) with polynomial time dependence, on a resolved grid."""
    import sympy as sp

    ts, a, b = sp.symbols("t x1 x2")
    expr = (1 + ts + ts**2 / 2) * sp.exp(-(a**2 + b**2) / 4) * sp.cos(1.5 * a - 0.5 * b)
    g = make_grid(n, L)
    return table_from_sympy(expr, (ts, a, b), t, g.x1, g.x2, order, grid=g, spatial="spectral")


def eigenmode_test(t: float = 2.0, n: int = 64, L: float = 8.0, order: int = 4):
    """Free-wave torus eigenmode cos(|k| t) cos(k.x) with a few fundamental modes."""
    import sympy as sp

    ts, a, b = sp.symbols("t x1 x2")
    k1, k2 = 2 * sp.pi / L, sp.pi / L
    kk = sp.sqrt(k1**2 + k2**2)
    expr = sp.cos(kk * ts) * sp.cos(k1 * a + k2 * b)
    g = make_grid(n, L)
    return table_from_sympy(expr, (ts, a, b), t, g.x1, g.x2, order, grid=g, spatial="spectral")


def evolved_state(t: float = 10.0, n: int = 128, L: float = 32.0, dt: float = 0.25, eps: float = 1e-3):
    g = make_grid(n, L)
    s0 = build_initial_state(default_data(eps), g, DEFAULT_COUPLINGS)
    return run(s0, dt, t).final


def identities_suite(state=None) -> list[Check]:
    checks = []
    poly, scale = polynomial_test()
    tol = 1e-12 * scale**3
    for gen in VECTOR_FIELDS:
        checks.append(_le(f"poly_box_{gen}", commutator_residual("box-gamma", poly, gen), tol))
    checks.append(_le("poly_box_S", commutator_residual("box-S", poly), tol))

    spec = spectral_test()
    for gen in VECTOR_FIELDS:
        checks.append(_le(f"gauss_box_{gen}", commutator_residual("box-gamma", spec, gen), IDENTITY_TOL))
    checks.append(_le("gauss_box_S", commutator_residual("box-S", spec), IDENTITY_TOL))
    eig = eigenmode_test()
    checks.append(_le("eigen_box_S", commutator_residual("box-S", eig), IDENTITY_TOL))
    span = max(commutator_span_residual(spec, a, gen)[0] for a in range(3) for gen in VECTOR_FIELDS + ("S",))
    checks.append(_le("commutator_span", span, IDENTITY_TOL))
    hess = np.max(np.abs(hessian_operator(eig.truncate(2)) + eig.box().value))
    checks.append(_le("hessian_identity_eigenmode", hess, IDENTITY_TOL))

    state = state if state is not None else evolved_state()
    tw, _ = state_tables(state, 2)
    rep = representation_check(tw)
    checks.append(_le("representation", rep.max_rel_error, REPRESENTATION_TOL))
    checks.append(_le("g_forms", rep.g_forms_mismatch, G_FORMS_TOL))
    scale = max(np.max(np.abs(state.w)), np.max(np.abs(state.v)))
    checks.append(_le("divergence_form", decomposition_residual(state), IDENTITY_TOL * scale))
    W, _, Fw, _ = time_levels(state, 3, with_forces=True)
    resid = np.max(np.abs(hessian_operator(table_from_levels(state.grid, state.t, W, 2)) - Fw[0]))
    checks.append(_le("hessian_identity_evolved", resid / max(np.max(np.abs(Fw[0])), 1e-300), IDENTITY_TOL))

    cfg = preset("decomposition")
    g = make_grid(cfg.n, cfg.L)
    s0 = build_initial_state(cfg.data, g, cfg.couplings)
    _, _, traj = evolve_decomposition(s0, cfg.dt, cfg.T)
    checks.append(_le("reconstruction_t20", traj[-1][1], RECONSTRUCTION_TOL))
    return checks


# ---------------------------------------------------------------------------
# oracles

def gaussian(amp: float = 1.0, width: float = 2.0):
    return lambda y1, y2: amp * math.exp(-(y1 * y1 + y2 * y2) / width**2)


def oracles_suite() -> list[Check]:
    checks = []
    # stepping the exact flow 1000 times against one application
    g = make_grid(256, 32.0)
    u0 = np.exp(-(g.r**2) / 4.0)
    u1 = np.exp(-((g.x1 - 1.0) ** 2 + g.x2**2) / 2.0)
    dt, steps = 0.01, 1000
    u, ut = u0, u1
    for _ in range(steps):
        u, ut = linear_flow_wave(g, u, ut, dt)
    ref, ref_t = linear_flow_wave(g, u0, u1, dt * steps)
    rel = max(np.max(np.abs(u - ref)) / np.max(np.abs(ref)), np.max(np.abs(ut - ref_t)) / np.max(np.abs(ref_t)))
    checks.append(_le("multiplier_vs_closed_form", rel, ORACLE_MULTIPLIER_TOL))

    # kernel quadrature at five points
    g = make_grid(256, 64.0)
    prof = gaussian(1.0, 2.0)
    t = 10.0
    u, _ = linear_flow_wave(g, np.zeros(g.shape), np.exp(-(g.r**2) / 4.0), t)
    worst = 0.0
    for i1, i2 in ((128, 128), (138, 128), (148, 128), (128, 145), (140, 140)):
        x = (g.x[i1], g.x[i2])
        worst = max(worst, abs(oracle_pointwise_wave(prof, t, x) - u[i1, i2]))
    checks.append(_le("kernel_quadrature", worst, ORACLE_KERNEL_TOL))

    # Klein-Gordon eigenmode
    g = make_grid(64, 8.0)
    k = (2 * math.pi / 8.0, math.pi / 8.0)
    mode = np.cos(k[0] * g.x1 + k[1] * g.x2)
    om = math.sqrt(1 + k[0] ** 2 + k[1] ** 2)
    v, _ = linear_flow_kg(g, mode, np.zeros(g.shape), 3.7)
    checks.append(_le("kg_eigenmode", np.max(np.abs(v - math.cos(om * 3.7) * mode)), 1e-12))
    return checks


# ---------------------------------------------------------------------------
# decay

def decay_checks(records, window=(10.0, 80.0)) -> list[Check]:
    from .diagnostics import BOOT_LINES, fit_decay, series

    checks = []
    for key, (target, tol) in SLOPE_TARGETS.items():
        t, y = series(records, key)
        fit = fit_decay(t, y, window)
        checks.append(Check(f"slope_{key}", bool(abs(fit.slope - target) <= tol), fit.slope, tol))
    checks.append(Check("weighted_sup_growth", growth_ratio(records, "sup_dw_weighted") <= GROWTH_FACTOR,
                        growth_ratio(records, "sup_dw_weighted"), GROWTH_FACTOR))
    for line in BOOT_LINES:
        g = growth_ratio(records, line)
        checks.append(Check(f"bootstrap_{line}", bool(g <= GROWTH_FACTOR), g, GROWTH_FACTOR))
    return checks


def decay_suite(cfg: RunConfig | None = None, directory=None, echo=print) -> list[Check]:
    cfg = cfg if cfg is not None else preset("theorem-decay")
    out = simulate(cfg, directory, echo=echo)
    return out.checks + decay_checks(out.records, cfg.decay_window)


def run_suite(name: str, cfg: RunConfig | None = None, directory=None, echo=print) -> list[Check]:
    if name == "identities":
        state = None
        if cfg is not None:
            g = make_grid(cfg.n, cfg.L)
            s0 = build_initial_state(cfg.data, g, cfg.couplings)
            state = run(s0, cfg.dt, min(cfg.T, 10.0)).final
        return identities_suite(state)
    if name == "oracles":
        return oracles_suite()
    if name == "decay":
        return decay_suite(cfg, directory, echo)
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")

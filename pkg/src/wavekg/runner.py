"""Run orchestration: configured simulation, outputs, checkpoints and resume."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config
from .diagnostics import (
    BOOT_LINES,
    DecayFit,
    DiagnosticsRecord,
    Monitor,
    fit_decay,
    parse_csv,
    plot_loglog,
    read_csv,
    records_to_csv,
    series,
    write_json,
)
from .fields import build_initial_state, load_checkpoint, safe_horizon, save_checkpoint, smallness_norms
from .grid import make_grid
from .propagate import AuxiliaryStates, DecompositionTracker, run

log = logging.getLogger(__name__)

OUTPUT_ENV = "WAVEKG_OUTPUT_DIR"
NULLFORM_LIMIT = 4.0
GROWTH_FACTOR = 10.0
CSV_NAME = "records.csv"
SUMMARY_NAME = "summary.json"


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    threshold: float

    def to_dict(self) -> dict:
        return {"passed": self.passed, "value": self.value, "threshold": self.threshold}


@dataclass
class RunOutcome:
    records: list[DiagnosticsRecord]
    summary: dict
    checks: list[Check] = field(default_factory=list)
    directory: Path | None = None
    final_state: object = None

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)


def output_directory(cfg: RunConfig, override: str | os.PathLike | None = None) -> Path:
    """Command-line override, then the environment variable, then the config."""
    if override is not None:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) if env else Path(cfg.directory)


def _checkpoint_path(directory: Path, index: int) -> Path:
    return directory / "checkpoints" / f"ckpt_{index:08d}.wkg"


def growth_ratio(records, key: str, t_ref: float = 5.0) -> float:
    """max over t >= t_ref of value / value(t_ref)."""
    t, y = series(records, key)
    sel = t >= t_ref - 1e-12
    if not np.any(sel):
        return float("nan")
    ref = y[sel][0]
    if ref == 0:
        return 0.0 if np.all(y[sel] == 0) else float("inf")
    return float(np.max(y[sel]) / ref)


def build_summary(cfg: RunConfig, records: list[DiagnosticsRecord], extra: dict) -> tuple[dict, list[Check]]:
    checks = []
    keys = records[0].values.keys() if records else ()
    if records:
        t, e = series(records, "energy_estimate_ratio")
        checks.append(Check("energy_estimate", bool(np.max(e) <= 1.0 + 1e-9), float(np.max(e)), 1.0))
        _, gb = series(records, "ghost_bound_ratio")
        checks.append(Check("ghost_bound", bool(np.max(gb) <= 1.0), float(np.max(gb)), 1.0))
        if "nullform_bound_ratio" in keys and cfg.null == "standard":
            _, nf = series(records, "nullform_bound_ratio")
            checks.append(Check("nullform_bound", bool(np.max(nf) <= NULLFORM_LIMIT),
                                float(np.max(nf)), NULLFORM_LIMIT))
    fits = {}
    for key in ("sup_w", "sup_v"):
        if not records:
            break
        t, y = series(records, key)
        lo, hi = cfg.decay_window
        try:
            fits[key] = fit_decay(t, y, (lo, min(hi, float(t[-1])))).to_dict()
        except ValueError as exc:
            fits[key] = {"error": str(exc)}
    growth = {}
    if records and records[-1].t >= 5.0:
        for key in ("sup_dw_weighted",) + BOOT_LINES:
            growth[key] = growth_ratio(records, key)
    summary = {
        "config": {"n": cfg.n, "L": cfg.L, "dt": cfg.dt, "T": cfg.T, "order_cap": cfg.order_cap,
                   "delta": cfg.delta, "delta0": cfg.delta0, "null": cfg.null,
                   "couplings": cfg.couplings.to_dict(), "seed": cfg.seed},
        "records": len(records),
        "final_t": records[-1].t if records else None,
        "decay_fits": fits,
        "growth_vs_t5": growth,
        "checks": {c.name: c.to_dict() for c in checks},
        **extra,
    }
    return summary, checks


def _write_outputs(cfg: RunConfig, directory: Path, csv_text: str, records, summary) -> None:
    if "csv" in cfg.formats:
        (directory / CSV_NAME).write_text(csv_text)
    if "json" in cfg.formats:
        write_json(directory / SUMMARY_NAME, summary)
    if "svg" in cfg.formats and records:
        plots = directory / "plots"
        plots.mkdir(exist_ok=True)
        for key in ("sup_w", "sup_v", "sup_dw_weighted"):
            t, y = series(records, key)
            fd = summary["decay_fits"].get(key)
            fit = None
            if fd and "slope" in fd:
                fit = DecayFit(fd["window"][0], fd["window"][1], fd["slope"], fd["intercept"],
                               fd["r2"], fd["samples"])
            plot_loglog(plots / f"{key}.svg", t, y, key, fit)


def simulate(cfg: RunConfig, directory: str | os.PathLike | None = None,
             stop_at: float | None = None, resume: str | os.PathLike | None = None,
             write: bool = True, echo=print) -> RunOutcome:
    """Run a configuration end to end.

    ``stop_at`` ends the run early (as if interrupted); ``resume`` continues
    from a checkpoint written by an earlier call with the same config.
    """
    out = output_directory(cfg, directory)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.checkpoint_every:
            (out / "checkpoints").mkdir(exist_ok=True)
    grid = make_grid(cfg.n, cfg.L)
    state0 = build_initial_state(cfg.data, grid, cfg.couplings)
    horizon = safe_horizon(grid, cfg.data)
    small = smallness_norms(state0, min(cfg.order_cap, 4))
    echo(f"smallness: data {small.data_sum:.6e} velocity {small.velocity_sum:.6e} total {small.total:.6e}")
    if cfg.T > horizon:
        echo(f"warning: T = {cfg.T} exceeds the safe horizon {horizon:.4g}; later records are flagged")

    start_index = 0
    prefix_records: list[DiagnosticsRecord] = []
    state = state0
    tracker = None
    monitor = Monitor(cap=cfg.order_cap, delta=cfg.delta, delta0=cfg.delta0, null=cfg.null,
                      sobolev=cfg.enable_sobolev, identities=cfg.identities, horizon=horizon)
    if resume is not None:
        ck = load_checkpoint(resume, grid)
        start_index = int(ck.extra["index"])
        state = ck.state
        monitor.load_state_dict(ck.extra["monitor"])
        if cfg.enable_decomposition:
            aux = AuxiliaryStates.from_arrays(state.t, ck.extra_arrays)
            tracker = DecompositionTracker(state, cfg.dt, aux=aux, last_index=start_index)
        csv_path = out / CSV_NAME
        if csv_path.exists():
            prefix_records = [r for r in read_csv(csv_path) if r.t <= state.t + 1e-12]
    elif cfg.enable_decomposition:
        tracker = DecompositionTracker(state0, cfg.dt)
    monitor.tracker = tracker

    def on_checkpoint(idx, st):
        if not write:
            return
        arrays = tracker.aux.to_arrays() if tracker is not None else []
        save_checkpoint(_checkpoint_path(out, idx), st,
                        extra={"index": idx, "monitor": monitor.state_dict(), "config": cfg.source},
                        extra_arrays=arrays)

    T_end = cfg.T if stop_at is None else min(stop_at, cfg.T)
    res = run(state, cfg.dt, T_end, record_every=cfg.record_every, on_record=monitor,
              on_step=[tracker] if tracker is not None else [],
              checkpoint_every=cfg.checkpoint_every or None, on_checkpoint=on_checkpoint,
              null=cfg.null, horizon=horizon, start_index=start_index)
    records = prefix_records + res.records
    csv_text = records_to_csv(records)
    # the summary is built from the CSV round trip so a resumed run sees identical numbers
    parsed = parse_csv(csv_text)
    extra = {"safe_horizon": horizon, "beyond_horizon": bool(res.beyond_horizon),
             "smallness": {"data": small.data_sum, "velocity": small.velocity_sum, "total": small.total},
             "complete": T_end >= cfg.T}
    summary, checks = build_summary(cfg, parsed, extra)
    if write:
        _write_outputs(cfg, out, csv_text, parsed, summary)
    return RunOutcome(parsed, summary, checks, out, res.final)


def resume_run(checkpoint: str | os.PathLike, directory: str | os.PathLike | None = None,
               echo=print) -> RunOutcome:
    """Continue a run using the configuration stored in the checkpoint."""
    ck = load_checkpoint(checkpoint)
    cfg = parse_config(ck.extra["config"])
    if directory is None:
        directory = Path(checkpoint).resolve().parent.parent
    return simulate(cfg, directory, resume=checkpoint, echo=echo)


def latest_checkpoint(directory: str | os.PathLike) -> Path | None:
    found = sorted((Path(directory) / "checkpoints").glob("ckpt_*.wkg"))
    return found[-1] if found else None

"""Run configuration: TOML parsing with strict validation, plus presets.

Every key is declared in :data:`SCHEMA`; anything else is rejected with a
suggestion of the closest known key.
"""
from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .fields import Bump, CouplingTensors, InitialDataSpec

REQUIRED = object()


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending dotted key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# dotted key -> (type, default, description)
SCHEMA: dict[str, tuple[str, Any, str]] = {
    "seed": ("int", 0, "seed for randomized initial-data superpositions"),
    "grid.n": ("int", REQUIRED, "nodes per axis (even, >= 8)"),
    "grid.L": ("float", REQUIRED, "half-width of the periodic box [-L, L)^2"),
    "time.dt": ("float", None, "time step (default 0.5 h)"),
    "time.T": ("float", REQUIRED, "final time"),
    "time.record_every": ("float", 1.0, "time between diagnostics records"),
    "time.checkpoint_every": ("float", 0.0, "time between checkpoints (0 disables)"),
    "couplings.C1": ("float", 0.0, "coefficient of Q_0 in the wave equation"),
    "couplings.C2": ("float", 0.0, "coefficient of Q_0 in the Klein-Gordon equation"),
    "couplings.C1ab": ("matrix", None, "3x3 coefficients of Q_ab in the wave equation"),
    "couplings.C2ab": ("matrix", None, "3x3 coefficients of Q_ab in the Klein-Gordon equation"),
    "data.random_bumps": ("int", 0, "number of random Gaussian bumps added to the listed ones"),
    "data.random_amplitude": ("float", 0.0, "amplitude bound of random bumps"),
    "data.random_width": ("float", 1.0, "width of random bumps"),
    "data.random_radius": ("float", 2.0, "radius of the disc holding random bump centers"),
    "data.bumps": ("bumps", [], "list of bump tables"),
    "diagnostics.order_cap": ("int", 2, "largest word length |I| (at most 3)"),
    "diagnostics.delta": ("float", 0.05, "bootstrap growth exponent"),
    "diagnostics.delta0": ("float", 0.1, "ghost-weight time exponent"),
    "diagnostics.decay_window": ("pair", None, "fit window [t_min, t_max] (default [5, T])"),
    "diagnostics.enable_sobolev": ("bool", False, "record the global Sobolev ratio"),
    "diagnostics.enable_decomposition": ("bool", False, "co-evolve the wave decomposition"),
    "diagnostics.identities": ("bool", True, "record identity residuals and null-form ratios"),
    "diagnostics.null": ("str", "standard", "standard, or broken (Q_0 replaced by d_t w d_t v)"),
    "output.directory": ("str", "wavekg-out", "output directory"),
    "output.formats": ("strlist", ["csv", "json", "svg"], "subset of csv, json, svg"),
}

BUMP_SCHEMA: dict[str, tuple[str, Any]] = {
    "target": ("str", REQUIRED),
    "amplitude": ("float", REQUIRED),
    "center": ("pair", (0.0, 0.0)),
    "width": ("float", 1.0),
    "kind": ("str", "gaussian"),
    "velocity": ("bool", False),
    "wavevector": ("pair", (0.0, 0.0)),
}

FORMATS = ("csv", "json", "svg")


@dataclass(frozen=True)
class RunConfig:
    n: int
    L: float
    dt: float
    T: float
    record_every: float
    checkpoint_every: float
    couplings: CouplingTensors
    data: InitialDataSpec
    order_cap: int = 2
    delta: float = 0.05
    delta0: float = 0.1
    decay_window: tuple[float, float] = (5.0, 1.0)
    enable_sobolev: bool = False
    enable_decomposition: bool = False
    identities: bool = True
    null: str = "standard"
    directory: str = "wavekg-out"
    formats: tuple[str, ...] = FORMATS
    seed: int = 0
    source: str = field(default="", compare=False, repr=False)

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    def with_directory(self, directory: str) -> "RunConfig":
        return replace(self, directory=directory)


def _suggest(key: str, known) -> str:
    close = difflib.get_close_matches(key, list(known), n=1, cutoff=0.5)
    return f"; did you mean {close[0]!r}?" if close else ""


def _flatten(doc: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, kind: str, value):
    def bad(expect):
        return ConfigError(key, f"expected {expect}, got {type(value).__name__} {value!r}")

    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        if not math.isfinite(value):
            raise ConfigError(key, "must be finite")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if kind == "strlist":
        if not isinstance(value, list) or not all(isinstance(s, str) for s in value):
            raise bad("a list of strings")
        return tuple(value)
    if kind == "pair":
        if (not isinstance(value, list) or len(value) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)):
            raise bad("a list of two numbers")
        return (float(value[0]), float(value[1]))
    if kind == "matrix":
        try:
            arr = np.array(value, dtype=float)
        except (TypeError, ValueError):
            raise bad("a 3x3 list of numbers") from None
        if arr.shape != (3, 3) or not np.all(np.isfinite(arr)):
            raise bad("a 3x3 list of finite numbers")
        return arr
    raise AssertionError(kind)


def _parse_bumps(raw) -> tuple[Bump, ...]:
    if not isinstance(raw, list):
        raise ConfigError("data.bumps", "expected an array of tables ([[data.bumps]])")
    out = []
    for i, b in enumerate(raw):
        where = f"data.bumps[{i}]"
        if not isinstance(b, dict):
            raise ConfigError(where, "expected a table")
        for k in b:
            if k not in BUMP_SCHEMA:
                raise ConfigError(f"{where}.{k}", "unknown key" + _suggest(k, BUMP_SCHEMA))
        vals = {}
        for k, (kind, default) in BUMP_SCHEMA.items():
            if k in b:
                vals[k] = _coerce(f"{where}.{k}", kind, b[k])
            elif default is REQUIRED:
                raise ConfigError(f"{where}.{k}", "missing required key")
            else:
                vals[k] = default
        try:
            out.append(Bump(**vals))
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None
    return tuple(out)


def _whole(key: str, span: float, dt: float) -> None:
    q = span / dt
    if abs(q - round(q)) > 1e-9 * max(1.0, q):
        raise ConfigError(key, f"{span} is not a whole number of time steps dt = {dt}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"not valid TOML: {exc}") from None
    flat = _flatten(doc)
    for key in flat:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key" + _suggest(key, SCHEMA))
    v: dict[str, Any] = {}
    for key, (kind, default, _) in SCHEMA.items():
        if key in flat:
            v[key] = _parse_bumps(flat[key]) if kind == "bumps" else _coerce(key, kind, flat[key])
        elif default is REQUIRED:
            raise ConfigError(key, "missing required key")
        else:
            v[key] = default

    n, L = v["grid.n"], v["grid.L"]
    if n < 8 or n % 2:
        raise ConfigError("grid.n", f"must be an even integer >= 8, got {n}")
    if not L > 0:
        raise ConfigError("grid.L", f"must be positive, got {L}")
    dt = v["time.dt"] if v["time.dt"] is not None else 0.5 * 2.0 * L / n
    if not dt > 0:
        raise ConfigError("time.dt", f"must be positive, got {dt}")
    T = v["time.T"]
    if not T > 0:
        raise ConfigError("time.T", f"must be positive, got {T}")
    _whole("time.T", T, dt)
    rec = v["time.record_every"]
    if not rec > 0:
        raise ConfigError("time.record_every", f"must be positive, got {rec}")
    _whole("time.record_every", rec, dt)
    q = T / rec
    if abs(q - round(q)) > 1e-9 * max(1.0, q):
        raise ConfigError("time.record_every", f"{rec} does not divide T = {T}")
    ck = v["time.checkpoint_every"]
    if ck < 0:
        raise ConfigError("time.checkpoint_every", f"must be nonnegative, got {ck}")
    if ck:
        _whole("time.checkpoint_every", ck, dt)
    cap = v["diagnostics.order_cap"]
    if not 0 <= cap <= 3:
        raise ConfigError("diagnostics.order_cap", f"must be between 0 and 3, got {cap}")
    if v["diagnostics.enable_sobolev"] and cap < 2:
        raise ConfigError("diagnostics.enable_sobolev", "needs diagnostics.order_cap >= 2")
    for key in ("diagnostics.delta", "diagnostics.delta0"):
        if not v[key] > 0:
            raise ConfigError(key, f"must be positive, got {v[key]}")
    if v["diagnostics.null"] not in ("standard", "broken"):
        raise ConfigError("diagnostics.null", f"must be 'standard' or 'broken', got {v['diagnostics.null']!r}")
    window = v["diagnostics.decay_window"]
    if window is None:
        # runs ending before t = 5 simply report no fit
        window = (5.0, max(T, 5.0))
    elif not 5.0 <= window[0] < window[1]:
        raise ConfigError("diagnostics.decay_window", f"needs 5 <= t_min < t_max, got {list(window)}")
    for f in v["output.formats"]:
        if f not in FORMATS:
            raise ConfigError("output.formats", f"unknown format {f!r}" + _suggest(f, FORMATS))
    if v["data.random_bumps"] < 0:
        raise ConfigError("data.random_bumps", "must be nonnegative")

    zero = np.zeros((3, 3))
    try:
        couplings = CouplingTensors(
            v["couplings.C1"], v["couplings.C2"],
            v["couplings.C1ab"] if v["couplings.C1ab"] is not None else zero,
            v["couplings.C2ab"] if v["couplings.C2ab"] is not None else zero)
    except ValueError as exc:
        raise ConfigError("couplings", str(exc)) from None
    data = InitialDataSpec(bumps=v["data.bumps"], seed=v["seed"],
                           random_bumps=v["data.random_bumps"],
                           random_amplitude=v["data.random_amplitude"],
                           random_width=v["data.random_width"],
                           random_radius=v["data.random_radius"])
    return RunConfig(n=n, L=L, dt=dt, T=T, record_every=rec, checkpoint_every=ck,
                     couplings=couplings, data=data, order_cap=cap,
                     delta=v["diagnostics.delta"], delta0=v["diagnostics.delta0"],
                     decay_window=window, enable_sobolev=v["diagnostics.enable_sobolev"],
                     enable_decomposition=v["diagnostics.enable_decomposition"],
                     identities=v["diagnostics.identities"], null=v["diagnostics.null"],
                     directory=v["output.directory"], formats=v["output.formats"],
                     seed=v["seed"], source=text)


def config_schema() -> dict:
    """Machine-readable description of every accepted key."""
    out = {}
    for key, (kind, default, doc) in SCHEMA.items():
        entry = {"type": kind, "description": doc}
        if default is REQUIRED:
            entry["required"] = True
        else:
            entry["default"] = default
        out[key] = entry
    out["data.bumps[]"] = {k: {"type": kind, **({"required": True} if d is REQUIRED else {"default": d})}
                           for k, (kind, d) in BUMP_SCHEMA.items()}
    return out


# ---------------------------------------------------------------------------
# presets

_COUPLED = """
[couplings]
C1 = 1.0
C2 = 1.0
C1ab = [[0.0, 0.5, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]
C2ab = [[0.0, 1.0, 0.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]]
"""


def _bumps(eps: float) -> str:
    return f"""
[[data.bumps]]
target = "w"
amplitude = {eps!r}
center = [1.0, 0.0]
width = 2.0

[[data.bumps]]
target = "w"
amplitude = {eps!r}
width = 2.0
velocity = true

[[data.bumps]]
target = "v"
amplitude = {eps!r}
center = [0.0, 0.5]
width = 2.0

[[data.bumps]]
target = "v"
amplitude = {eps!r}
width = 2.0
velocity = true
"""


PRESETS: dict[str, str] = {
    # decay exponents and bootstrap monitors
    "theorem-decay": f"""
[grid]
n = 512
L = 128.0

[time]
dt = 0.25
T = 80.0
record_every = 1.0

[diagnostics]
decay_window = [10.0, 80.0]

[output]
directory = "theorem-decay"
{_COUPLED}{_bumps(1e-3)}""",
    # co-evolved wave decomposition
    "decomposition": f"""
[grid]
n = 128
L = 32.0

[time]
dt = 0.0625
T = 20.0
record_every = 1.0

[diagnostics]
order_cap = 1
enable_decomposition = true

[output]
directory = "decomposition"
{_COUPLED}{_bumps(1e-3)}""",
    # null structure kept or broken
    "null-ab": f"""
[grid]
n = 256
L = 64.0

[time]
dt = 0.25
T = 40.0
record_every = 1.0

[output]
directory = "null-ab"
{_COUPLED}{_bumps(0.05)}""",
    # free evolution
    "linear": f"""
[grid]
n = 128
L = 32.0

[time]
dt = 0.25
T = 20.0
record_every = 1.0

[output]
directory = "linear"
{_bumps(1e-3)}""",
    # small smoke run
    "smoke": f"""
[grid]
n = 64
L = 32.0

[time]
T = 10.0
record_every = 1.0
checkpoint_every = 5.0

[output]
directory = "smoke"
{_COUPLED}{_bumps(1e-3)}""",
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}" + _suggest(name, PRESETS))
    return parse_config(PRESETS[name])

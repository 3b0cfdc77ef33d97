"""State container, coupling constants, initial data and checkpoint I/O."""
from __future__ import annotations

import io
import json
import math
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .grid import Grid, integrate, make_grid

log = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e6
SUPPORT_FLOOR = 1e-12


class BlowUpError(RuntimeError):
    pass


class InitialDataError(ValueError):
    pass


@dataclass(frozen=True)
class CouplingTensors:
    """Constants of the two right-hand sides.

    ``C1ab[a, b]`` multiplies ``Q_ab(w, v)`` in the wave equation, ``C2ab``
    in the Klein-Gordon equation.  Only antisymmetric parts act.
    """

    C1: float = 0.0
    C2: float = 0.0
    C1ab: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    C2ab: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        for name in ("C1ab", "C2ab"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3, got shape {a.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "C1", float(self.C1))
        object.__setattr__(self, "C2", float(self.C2))

    def inert_entries(self) -> list[str]:
        """Names of nonzero diagonal entries, which never influence the dynamics."""
        out = []
        for name in ("C1ab", "C2ab"):
            a = getattr(self, name)
            out += [f"{name}[{i},{i}]" for i in range(3) if a[i, i] != 0.0]
        return out

    @property
    def wave_is_linear(self) -> bool:
        return self.C1 == 0.0 and not np.any(self.C1ab - self.C1ab.T)

    @property
    def is_linear(self) -> bool:
        return self.wave_is_linear and self.C2 == 0.0 and not np.any(self.C2ab - self.C2ab.T)

    def to_dict(self) -> dict:
        return {"C1": self.C1, "C2": self.C2,
                "C1ab": self.C1ab.tolist(), "C2ab": self.C2ab.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CouplingTensors":
        return cls(C1=d["C1"], C2=d["C2"], C1ab=np.array(d["C1ab"]), C2ab=np.array(d["C2ab"]))

    def __eq__(self, other):
        if not isinstance(other, CouplingTensors):
            return NotImplemented
        return (self.C1 == other.C1 and self.C2 == other.C2
                and np.array_equal(self.C1ab, other.C1ab)
                and np.array_equal(self.C2ab, other.C2ab))

    def __hash__(self):
        return hash((self.C1, self.C2, self.C1ab.tobytes(), self.C2ab.tobytes()))


ZERO_COUPLINGS = CouplingTensors()


@dataclass(frozen=True, eq=False)
class FieldState:
    """(w, w_t, v, v_t) on one grid at time t."""

    t: float
    w: np.ndarray
    wt: np.ndarray
    v: np.ndarray
    vt: np.ndarray
    grid: Grid
    couplings: CouplingTensors = ZERO_COUPLINGS

    def __post_init__(self):
        self.grid.check(self.w, self.wt, self.v, self.vt)

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.w, self.wt, self.v, self.vt)

    def with_fields(self, t, w, wt, v, vt) -> "FieldState":
        return replace(self, t=float(t), w=w, wt=wt, v=v, vt=vt)

    def check_finite(self) -> None:
        for name, a in zip(("w", "wt", "v", "vt"), self.arrays):
            if not np.all(np.isfinite(a)):
                raise BlowUpError(f"non-finite values in {name} at t={self.t}")
            peak = np.max(np.abs(a))
            if peak > BLOWUP_THRESHOLD:
                raise BlowUpError(f"|{name}| = {peak:.3g} exceeds {BLOWUP_THRESHOLD:g} at t={self.t}")

    def copy(self) -> "FieldState":
        return self.with_fields(self.t, *(a.copy() for a in self.arrays))


@dataclass(frozen=True)
class Bump:
    """One Gaussian profile ``amplitude * exp(-|x - center|^2 / width^2)``.

    ``modulated-gaussian`` multiplies by ``cos(wavevector . (x - center))``.
    With ``velocity=True`` the profile goes into the time derivative.
    """

    target: Literal["w", "v"]
    amplitude: float
    center: tuple[float, float] = (0.0, 0.0)
    width: float = 1.0
    kind: Literal["gaussian", "modulated-gaussian"] = "gaussian"
    velocity: bool = False
    wavevector: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.target not in ("w", "v"):
            raise InitialDataError(f"bump target must be 'w' or 'v', got {self.target!r}")
        if self.kind not in ("gaussian", "modulated-gaussian"):
            raise InitialDataError(f"unknown bump kind {self.kind!r}")
        if not self.width > 0:
            raise InitialDataError(f"bump width must be positive, got {self.width!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "wavevector", tuple(float(c) for c in self.wavevector))

    def support_radius(self) -> float:
        """Distance from the origin beyond which |profile| < 1e-12."""
        a = abs(self.amplitude)
        if a <= SUPPORT_FLOOR:
            return 0.0
        return float(np.hypot(*self.center) + self.width * np.sqrt(np.log(a / SUPPORT_FLOOR)))

    def evaluate(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        d1 = x1 - self.center[0]
        d2 = x2 - self.center[1]
        g = self.amplitude * np.exp(-(d1**2 + d2**2) / self.width**2)
        if self.kind == "modulated-gaussian":
            g = g * np.cos(self.wavevector[0] * d1 + self.wavevector[1] * d2)
        return g


@dataclass(frozen=True)
class InitialDataSpec:
    bumps: tuple[Bump, ...] = ()
    seed: int = 0
    # extra Gaussians drawn from default_rng(seed), all with this amplitude scale
    random_bumps: int = 0
    random_amplitude: float = 0.0
    random_width: float = 1.0
    random_radius: float = 2.0

    def all_bumps(self) -> list[Bump]:
        out = list(self.bumps)
        if self.random_bumps:
            rng = np.random.default_rng(self.seed)
            for _ in range(self.random_bumps):
                target = "w" if rng.random() < 0.5 else "v"
                velocity = bool(rng.random() < 0.5)
                amp = self.random_amplitude * rng.uniform(-1.0, 1.0)
                rad = self.random_radius * np.sqrt(rng.random())
                ang = rng.uniform(0.0, 2 * np.pi)
                out.append(Bump(target=target, amplitude=amp, velocity=velocity,
                                center=(rad * np.cos(ang), rad * np.sin(ang)),
                                width=self.random_width))
        return out

    def support_radius(self) -> float:
        return max((b.support_radius() for b in self.all_bumps()), default=0.0)


def build_initial_state(spec: InitialDataSpec, grid: Grid,
                        couplings: CouplingTensors = ZERO_COUPLINGS) -> FieldState:
    r0 = spec.support_radius()
    if r0 >= grid.L / 2:
        raise InitialDataError(
            f"initial data support radius {r0:.3f} must be below L/2 = {grid.L / 2:.3f}")
    slots = {key: np.zeros(grid.shape) for key in ("w", "wt", "v", "vt")}
    for b in spec.all_bumps():
        key = b.target + ("t" if b.velocity else "")
        slots[key] += b.evaluate(grid.x1, grid.x2)
    if couplings.inert_entries():
        log.warning("diagonal coupling entries are inert: %s", ", ".join(couplings.inert_entries()))
    return FieldState(0.0, slots["w"], slots["wt"], slots["v"], slots["vt"], grid, couplings)


def safe_horizon(grid: Grid, spec: InitialDataSpec) -> float:
    """Latest time before waves leaving the data support wrap around the torus."""
    return grid.L - spec.support_radius()


# ---------------------------------------------------------------------------
# weighted initial-data norms

def _derivative_tensor_norm(grid: Grid, f: np.ndarray, k: int) -> np.ndarray:
    """Pointwise Frobenius norm of the k-th derivative tensor of f."""
    if k == 0:
        return np.abs(f)
    fh = grid.fft(f)
    total = np.zeros(grid.shape)
    for a in range(k + 1):
        # the partial d1^a d2^(k-a) appears comb(k, a) times in the tensor
        part = grid.ifft(grid.ik1**a * grid.ik2 ** (k - a) * fh)
        total += math.comb(k, a) * part**2
    return np.sqrt(total)


def _l1_plus_l2(grid: Grid, f: np.ndarray) -> float:
    # min of the two norms bounds the infimal-sum norm from above
    return min(integrate(grid, np.abs(f)), np.sqrt(integrate(grid, f**2)))


@dataclass(frozen=True)
class SmallnessReport:
    order_cap: int
    data_sum: float
    velocity_sum: float

    @property
    def total(self) -> float:
        return self.data_sum + self.velocity_sum


def smallness_norms(state0: FieldState, order_cap: int = 2) -> SmallnessReport:
    """Weighted Sobolev size of the initial data.

    Position data are summed over derivative orders ``k <= order_cap`` and
    velocity data over ``k <= order_cap - 1``.
    """
    if state0.t != 0.0:
        raise ValueError(f"smallness norms are defined at t = 0, state has t = {state0.t}")
    if not 0 <= order_cap <= 4:
        raise ValueError(f"order_cap must lie in [0, 4], got {order_cap}")
    g = state0.grid
    jx = np.sqrt(1.0 + g.r**2)
    logw = np.log(2.0 + g.r)

    def l2(f):
        return float(np.sqrt(integrate(g, f**2)))

    data = 0.0
    for k in range(order_cap + 1):
        data += _l1_plus_l2(g, jx**k * _derivative_tensor_norm(g, state0.w, k))
        data += l2(jx ** (k + 1) * logw * _derivative_tensor_norm(g, state0.v, k))
    vel = 0.0
    for k in range(order_cap):
        vel += _l1_plus_l2(g, jx ** (k + 1) * _derivative_tensor_norm(g, state0.wt, k))
        vel += l2(jx ** (k + 2) * logw * _derivative_tensor_norm(g, state0.vt, k))
    return SmallnessReport(order_cap, data, vel)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"WKGCKPT1"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, state: FieldState, extra: dict | None = None,
                    extra_arrays: Sequence[tuple[str, np.ndarray]] = ()) -> None:
    """Write ``state`` as magic, header length, JSON header, then raw arrays.

    Arrays are little-endian float64 in row-major order: w, wt, v, vt and
    then any ``extra_arrays`` in the order listed in the header.
    """
    header = {
        "version": CHECKPOINT_VERSION,
        "n": state.grid.n,
        "L": state.grid.L,
        "t": state.t,
        "couplings": state.couplings.to_dict(),
        "arrays": ["w", "wt", "v", "vt"] + [name for name, _ in extra_arrays],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for a in list(state.arrays) + [a for _, a in extra_arrays]:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes(order="C"))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


@dataclass
class Checkpoint:
    state: FieldState
    extra: dict
    extra_arrays: dict[str, np.ndarray]


def load_checkpoint(path: str | Path, grid: Grid | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    n, L = header["n"], header["L"]
    if grid is None:
        grid = make_grid(n, L)
    elif grid.n != n or grid.L != L:
        raise ValueError(f"checkpoint grid (n={n}, L={L}) differs from requested grid")
    size = n * n * 8
    off = 16 + hlen
    arrays = {}
    for name in header["arrays"]:
        arrays[name] = np.frombuffer(raw[off:off + size], dtype="<f8").reshape(n, n).astype(float)
        off += size
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes after arrays")
    state = FieldState(header["t"], arrays.pop("w"), arrays.pop("wt"), arrays.pop("v"),
                       arrays.pop("vt"), grid, CouplingTensors.from_dict(header["couplings"]))
    return Checkpoint(state, header["extra"], arrays)

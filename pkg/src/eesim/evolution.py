"""Fixed-step RK4 time integration with continuation guards."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .background import DerivedConstants, background_at
from .fluid import acoustical_metric, enthalpy_sq
from .grid import PeriodicGrid, load_fields, save_fields
from .rhs import evolution_rhs
from .state import FIELD_NAMES, G0, G00, H, NFIELDS, PHI, PHI_T, EvolutionState, sym_full
from .tensors import DegenerateMetricError, MetricPoint, invert_metric

CFL_FACTOR = 0.5


class ConfigError(ValueError):
    pass


@dataclass
class GuardThresholds:
    g00_max: float = -0.5
    eig_min_g: float = 0.1
    eig_min_m: float = 1e-3
    field_max: float = 1e6

    def __post_init__(self):
        if not self.g00_max < 0:
            raise ConfigError("g00_max must be negative")
        if not self.eig_min_g > 0 or not self.eig_min_m > 0:
            raise ConfigError("eigenvalue floors must be positive")
        if not self.field_max > 0:
            raise ConfigError("field_max must be positive")


@dataclass
class EvolutionConfig:
    dt: float
    t_end: float
    guard_thresholds: GuardThresholds = field(default_factory=GuardThresholds)
    output_stride: int = 1
    snapshot_stride: int = 0       # 0 disables snapshot storage
    dealias: bool = False
    background_subtraction: bool = True

    def __post_init__(self):
        if isinstance(self.guard_thresholds, dict):
            self.guard_thresholds = GuardThresholds(**self.guard_thresholds)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            raise ConfigError(f"t_end must be positive, got {self.t_end}")
        if int(self.output_stride) < 1:
            raise ConfigError("output_stride must be at least 1")
        if int(self.snapshot_stride) < 0:
            raise ConfigError("snapshot_stride must be non-negative")
        self.output_stride = int(self.output_stride)
        self.snapshot_stride = int(self.snapshot_stride)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# --- guards ------------------------------------------------------------------

def _sym_eigs(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of a (3, 3, ...) symmetric field, shape (..., 3)."""
    mm = np.moveaxis(m.reshape(3, 3, -1), -1, 0)
    return np.linalg.eigvalsh(mm)


def _acoustic(state: EvolutionState, dc: DerivedConstants):
    bg = background_at(dc, state.t)
    m = MetricPoint(state.g00, state.g0, bg.e2 * state.h)
    inv = invert_metric(m, check=False)
    return bg, inv, acoustical_metric(inv, state.phi_t, state.phi, dc.s, bg.Omega, check=False)


def check_guards(state: EvolutionState, dc: DerivedConstants, thr: GuardThresholds) -> None:
    """Raise DegenerateMetricError with the breakdown class of the first failed guard."""
    y = state.y
    if not np.all(np.isfinite(y)):
        raise DegenerateMetricError(4, "non-finite values in the state", int(np.count_nonzero(~np.isfinite(y))))
    big = float(np.max(np.abs(y)))
    if big > thr.field_max:
        raise DegenerateMetricError(4, f"field magnitude {big:.3e} exceeds {thr.field_max:.3e}")
    bad = state.g00 > thr.g00_max
    if np.any(bad):
        raise DegenerateMetricError(1, f"g_00 rose above {thr.g00_max}", int(np.count_nonzero(bad)))
    eg = _sym_eigs(state.h).min()
    if not eg >= thr.eig_min_g:
        raise DegenerateMetricError(2, f"smallest eigenvalue of e^(-2 Omega) g_jk is {eg:.3e}")
    bg, inv, ac = _acoustic(state, dc)
    sigma = enthalpy_sq(inv, state.phi_t, state.phi, check=False)
    if not np.all(sigma > 0):
        raise DegenerateMetricError(3, "enthalpy sigma is not positive", int(np.count_nonzero(~(sigma > 0))))
    if not np.all(ac.denom > 0):
        raise DegenerateMetricError(3, "acoustical denominator is not positive")
    em = _sym_eigs(bg.e2 * ac.ms).min()
    if not em >= thr.eig_min_m:
        raise DegenerateMetricError(3, f"smallest eigenvalue of e^(2 Omega) m^jk is {em:.3e}")


def max_wave_speed(state: EvolutionState, dc: DerivedConstants) -> float:
    """Largest coordinate speed of light and of sound, e^{−Ω}√λ_max(e^{2Ω}g^{jk}) and its acoustical analogue."""
    bg, inv, ac = _acoustic(state, dc)
    light = math.sqrt(max(_sym_eigs(bg.e2 * inv.gus).max(), 0.0))
    sound = math.sqrt(max(_sym_eigs(bg.e2 * ac.ms).max(), 0.0))
    return math.exp(-bg.Omega) * max(light, sound)


def check_cfl(state: EvolutionState, dc: DerivedConstants, dt: float) -> float:
    """Return the CFL number dt·speed / spacing; raise ConfigError above the bound."""
    speed = max_wave_speed(state, dc)
    ratio = abs(dt) * speed / state.grid.spacing
    if ratio > CFL_FACTOR:
        raise ConfigError(f"dt={dt} violates the CFL bound: dt*speed/spacing = {ratio:.3f} > {CFL_FACTOR}"
                          f" (dt must be <= {CFL_FACTOR * state.grid.spacing / speed:.4g})")
    return ratio


# --- stepping ----------------------------------------------------------------

def background_vector(dc: DerivedConstants, t: float) -> tuple:
    """Packed values of the exact background at time t and their time derivative, shape (24, 1, 1, 1)."""
    bg = background_at(dc, t)
    y = np.zeros((NFIELDS, 1, 1, 1))
    y[G00] = -1.0
    y[H.start + 0] = y[H.start + 3] = y[H.start + 5] = 1.0
    y[PHI_T] = bg.phi_t
    dy = np.zeros_like(y)
    dy[PHI_T] = -dc.w * bg.omega * bg.phi_t
    return y, dy


def step(state: EvolutionState, dt: float, dc: DerivedConstants, dealias: bool = False,
         background_subtraction: bool = True) -> EvolutionState:
    """One classical RK4 step; negative dt integrates backwards.

    With ``background_subtraction`` the stages integrate the deviation
    δ = y − ỹ(t) from the analytic background, δ' = F(ỹ + δ, t) − ỹ'(t).
    This is the same ODE, but the truncation error then scales with the
    perturbation instead of with the background decay of Φ_t.
    """
    grid, y, t = state.grid, state.y, state.t
    if background_subtraction:
        def f(d, tt):
            yb, dyb = background_vector(dc, tt)
            return evolution_rhs(yb + d, tt, grid, dc, dealias=dealias) - dyb

        y0 = y - background_vector(dc, t)[0]
    else:
        def f(d, tt):
            return evolution_rhs(d, tt, grid, dc, dealias=dealias)

        y0 = y
    k1 = f(y0, t)
    k2 = f(y0 + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(y0 + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(y0 + dt * k3, t + dt)
    y1 = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if background_subtraction:
        y1 = y1 + background_vector(dc, t + dt)[0]
    return EvolutionState(grid, y1, t + dt)


@dataclass
class Termination:
    status: str                    # "completed" or "guard"
    t: float
    steps: int
    breakdown_class: int | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    grid: PeriodicGrid
    times: list = field(default_factory=list)
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)      # (t, packed array)
    termination: Termination | None = None
    final_state: EvolutionState | None = None

    @property
    def completed(self) -> bool:
        return self.termination is not None and self.termination.status == "completed"

    def series(self, key: str) -> list:
        return [(r["t"], r[key]) for r in self.records if key in r]


Hook = Callable[[EvolutionState], dict]


def evolve(state: EvolutionState, config: EvolutionConfig, dc: DerivedConstants,
           hooks: Iterable[Hook] = (), check_cfl_at_start: bool = True) -> Trajectory:
    """Integrate to ``config.t_end`` or to the first guard violation.

    Every ``output_stride`` steps (and at both ends) each hook is called with
    the current state; the returned dicts are merged into one record.  Guard
    violations end the run with a structured termination record.
    """
    hooks = list(hooks)
    traj = Trajectory(grid=state.grid)
    if check_cfl_at_start:
        check_cfl(state, dc, config.dt)
    nsteps = int(math.ceil((config.t_end - state.t) / config.dt - 1e-9))
    t0 = state.t

    def emit(st):
        rec = {"t": st.t}
        for hk in hooks:
            out = hk(st)
            if out:
                rec.update(out)
        traj.times.append(st.t)
        traj.records.append(rec)

    try:
        check_guards(state, dc, config.guard_thresholds)
    except DegenerateMetricError as exc:
        traj.termination = Termination("guard", state.t, 0, exc.breakdown_class, str(exc))
        traj.final_state = state
        return traj
    emit(state)
    if config.snapshot_stride:
        traj.snapshots.append((state.t, state.y.copy()))
    cur = state
    k = 0
    try:
        for k in range(1, nsteps + 1):
            nxt = step(cur, config.dt, dc, config.dealias, config.background_subtraction)
            # Fixed-step time from the step count avoids accumulating rounding in t.
            nxt.t = t0 + k * config.dt
            check_guards(nxt, dc, config.guard_thresholds)
            cur = nxt
            if k % config.output_stride == 0 or k == nsteps:
                emit(cur)
            if config.snapshot_stride and (k % config.snapshot_stride == 0 or k == nsteps):
                traj.snapshots.append((cur.t, cur.y.copy()))
    except DegenerateMetricError as exc:
        traj.termination = Termination("guard", cur.t, k - 1, exc.breakdown_class, str(exc))
        traj.final_state = cur
        return traj
    traj.termination = Termination("completed", cur.t, nsteps)
    traj.final_state = cur
    return traj


# --- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, state: EvolutionState, config: EvolutionConfig, dc: DerivedConstants) -> Path:
    """Write the state in the snapshot format plus a JSON sidecar; returns the sidecar path."""
    path = Path(path)
    save_fields(path, state.named_fields(), state.t)
    side = path.with_name(path.name + ".json")
    side.write_text(json.dumps({"t": state.t, "config_hash": config.digest(), "dc": dc.to_dict()},
                               sort_keys=True, indent=2))
    return side


def load_checkpoint(path, grid: PeriodicGrid | None = None):
    """Return (state, sidecar dict)."""
    path = Path(path)
    t, fields = load_fields(path)
    missing = [n for n in FIELD_NAMES if n not in fields]
    if missing:
        raise ValueError(f"{path}: checkpoint lacks fields {missing}")
    y = np.stack([fields[n] for n in FIELD_NAMES])
    grid = grid or PeriodicGrid(y.shape[-1])
    side_path = path.with_name(path.name + ".json")
    side = json.loads(side_path.read_text()) if side_path.exists() else {}
    if side and side.get("t") != t:
        raise ValueError(f"{path}: sidecar time {side.get('t')} differs from snapshot time {t}")
    return EvolutionState(grid, y, t), side


__all__ = [
    "ConfigError", "GuardThresholds", "EvolutionConfig", "check_guards", "check_cfl", "max_wave_speed", "background_vector", "step",
    "Termination", "Trajectory", "evolve", "save_checkpoint", "load_checkpoint",
]

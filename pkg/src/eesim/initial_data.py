"""Initial states: the exact background, single-mode perturbations, homogeneous
constrained data, and the completion of Einstein data to modified-system data."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .background import CosmologyParams, DerivedConstants, background_at
from .grid import GridError, PeriodicGrid, band_limit, mode_profile
from .state import DG0, DG00, DH, EvolutionState, G0, G00, H, PHI, PHI_T, PAIRS, sym_unique
from .tensors import spatial_inverse

TARGETS = ("g00", "g0j", "hjk", "phi_t", "phi_j")
PROFILES = ("cosine", "sine")


class InitialDataError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationSpec:
    """Add ``amplitude · profile(mode · x)`` to one component.

    ``index`` is 1-based: ``(j,)`` for g0j and phi_j, ``(j, k)`` for hjk,
    and empty for the scalar targets.
    """

    amplitude: float
    target: str
    mode: tuple = (1, 0, 0)
    profile: str = "cosine"
    index: tuple = ()

    def __post_init__(self):
        if not (self.amplitude >= 0):
            raise InitialDataError(f"amplitude must be non-negative, got {self.amplitude}")
        if self.target not in TARGETS:
            raise InitialDataError(f"unknown perturbation target {self.target!r}; expected one of {TARGETS}")
        if self.profile not in PROFILES:
            raise InitialDataError(f"unknown profile {self.profile!r}")
        object.__setattr__(self, "mode", tuple(int(m) for m in self.mode))
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))
        if len(self.mode) != 3:
            raise InitialDataError("mode must have three integer components")
        need = {"g00": 0, "phi_t": 0, "g0j": 1, "phi_j": 1, "hjk": 2}[self.target]
        if len(self.index) != need or any(not 1 <= i <= 3 for i in self.index):
            raise InitialDataError(f"target {self.target} needs {need} indices in 1..3, got {self.index}")

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "target": self.target, "mode": list(self.mode),
                "profile": self.profile, "index": list(self.index)}

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        allowed = {"amplitude", "target", "mode", "profile", "index"}
        extra = set(d) - allowed
        if extra:
            raise InitialDataError(f"unknown perturbation keys: {sorted(extra)}")
        return cls(amplitude=float(d["amplitude"]), target=d["target"], mode=tuple(d.get("mode", (1, 0, 0))),
                   profile=d.get("profile", "cosine"), index=tuple(d.get("index", ())))


@dataclass
class EinsteinData:
    """Data on the initial slice: ḡ, K̄, ∂̄Φ̊ and Ψ̊ (the normal derivative of Φ)."""

    grid: PeriodicGrid
    gbar: np.ndarray
    Kbar: np.ndarray
    dphi: np.ndarray
    psi_ring: np.ndarray

    def __post_init__(self):
        shp = self.grid.shape
        self.gbar = _broadcast(self.gbar, (3, 3) + shp)
        self.Kbar = _broadcast(self.Kbar, (3, 3) + shp)
        self.dphi = _broadcast(self.dphi, (3,) + shp)
        self.psi_ring = _broadcast(self.psi_ring, shp)
        if not np.allclose(self.Kbar, np.swapaxes(self.Kbar, 0, 1), rtol=0, atol=1e-14):
            raise InitialDataError("second fundamental form must be symmetric")


def _broadcast(a, shape):
    a = np.asarray(a, dtype=float)
    lead = len(shape) - 3
    if a.shape == shape[:lead]:
        a = a.reshape(a.shape + (1, 1, 1))
    return np.array(np.broadcast_to(a, shape))


def background_state(dc: DerivedConstants, grid: PeriodicGrid, t0: float = 0.0) -> EvolutionState:
    """Exact background data in the h = e^{−2Ω}g variables."""
    bg = background_at(dc, t0)
    return EvolutionState.from_fields(grid, t0, g00=-1.0, dt_g00=0.0, g0=np.zeros(3), dt_g0=np.zeros(3),
                                      h=np.eye(3), dt_h=np.zeros((3, 3)), phi_t=bg.phi_t, phi=np.zeros(3))


def perturbation_field(grid: PeriodicGrid, spec: PerturbationSpec) -> np.ndarray:
    """The additive change to the packed array produced by ``spec``."""
    if math.sqrt(sum(m * m for m in spec.mode)) > band_limit(grid.n):
        raise GridError(f"mode {spec.mode} exceeds the band limit n/3 = {band_limit(grid.n)} for n={grid.n}")
    delta = np.zeros((24,) + grid.shape)
    prof = spec.amplitude * mode_profile(grid, spec.mode, spec.profile)
    if spec.target == "g00":
        delta[G00] = prof
    elif spec.target == "phi_t":
        delta[PHI_T] = prof
    elif spec.target == "g0j":
        delta[G0.start + spec.index[0] - 1] = prof
    elif spec.target == "phi_j":
        delta[PHI.start + spec.index[0] - 1] = prof
    else:
        j, k = sorted(i - 1 for i in spec.index)
        delta[H.start + PAIRS.index((j, k))] = prof
    return delta


def perturb(state: EvolutionState, spec: PerturbationSpec) -> EvolutionState:
    out = state.copy()
    out.y = out.y + perturbation_field(state.grid, spec)
    return out


def perturb_all(state: EvolutionState, specs: Iterable[PerturbationSpec]) -> EvolutionState:
    for spec in specs:
        state = perturb(state, spec)
    return state


def normalized_perturbation(state: EvolutionState, specs: Sequence[PerturbationSpec], dc: DerivedConstants,
                            target_norm: float, N: int) -> tuple:
    """Rescale ``specs`` jointly so the perturbed state has S_total;N = ``target_norm``.

    The block norms vanish on the background and are absolutely homogeneous in
    the deviation from it, so one linear rescaling is exact.  Returns
    (state, rescaled specs).
    """
    from .diagnostics import norms

    if target_norm < 0:
        raise InitialDataError("target norm must be non-negative")
    base = norms(state, dc, N).S_total
    trial = perturb_all(state, specs)
    unit = norms(trial, dc, N).S_total - base
    if base > 1e-14 * max(1.0, unit):
        raise InitialDataError("normalisation requires an unperturbed background state")
    if unit <= 0:
        if target_norm == 0:
            return state.copy(), list(specs)
        raise InitialDataError("perturbation has zero norm; cannot rescale")
    lam = target_norm / unit
    scaled = [replace(sp, amplitude=sp.amplitude * lam) for sp in specs]
    return perturb_all(state, scaled), scaled


# --- homogeneous constrained data --------------------------------------------

def gauss_rhs_homogeneous(dc: DerivedConstants, psi_ring: float) -> float:
    """2Λ + 4σ^sΨ̊² − (2/(s+1))σ^{s+1} with σ = Ψ̊²."""
    s = dc.s
    sig = psi_ring * psi_ring
    return 2.0 * dc.lam + 4.0 * sig ** s * sig - 2.0 / (s + 1.0) * sig ** (s + 1.0)


def homogeneous_gauss_residual(k: float, aniso: Sequence[float], dc: DerivedConstants, psi_ring: float) -> float:
    """(tr K)² − K·K minus the source, with K^a_b = diag(k + δ_a)."""
    diag = np.asarray([k + d for d in aniso], dtype=float)
    return float(diag.sum() ** 2 - np.sum(diag * diag) - gauss_rhs_homogeneous(dc, psi_ring))


def solve_isotropic_rate(dc: DerivedConstants, aniso: Sequence[float], psi_ring: float,
                         t0: float = 0.0) -> float:
    """Root k of the homogeneous Gauss relation in [H, 10ω(t0)], with one Newton polish."""
    bg = background_at(dc, t0)
    lo, hi = dc.H, 10.0 * bg.omega
    f = lambda k: homogeneous_gauss_residual(k, aniso, dc, psi_ring)
    flo, fhi = f(lo), f(hi)
    if not (flo <= 0.0 <= fhi):
        raise InitialDataError(f"no admissible root of the Gauss relation in [{lo}, {hi}] "
                               f"(residuals {flo:.3e}, {fhi:.3e})")
    if flo == 0.0:
        return lo
    k = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    # d/dk [(3k)² − Σ(k+δ)²] = 18k − 2Σ(k+δ) = 12k since Σδ = 0.
    k = k - f(k) / (12.0 * k)
    return float(k)


def homogeneous_constrained_data(dc: DerivedConstants, params: CosmologyParams | None, grid: PeriodicGrid,
                                 K_anisotropy: Sequence[float] = (0.0, 0.0, 0.0), psi_ring: float | None = None,
                                 t0: float = 0.0) -> EvolutionState:
    """Spatially constant data satisfying Gauss and Codazzi, completed to a full state.

    The slice metric is the background one, ḡ = e^{2Ω(t0)}δ (just δ when
    å = 1), and K̄^a_b = diag(k + δ_a) with k fixed by the Gauss relation.
    ``params`` is accepted for symmetry with the other constructors; all
    needed values come from ``dc``.
    """
    aniso = [float(d) for d in K_anisotropy]
    if len(aniso) != 3:
        raise InitialDataError("K_anisotropy needs three entries")
    if abs(sum(aniso)) > 1e-14 * max(1.0, max(abs(d) for d in aniso)):
        raise InitialDataError(f"K_anisotropy must be trace free, sum = {sum(aniso)}")
    bg = background_at(dc, t0)
    psi = bg.phi_t if psi_ring is None else float(psi_ring)
    if not psi > 0:
        raise InitialDataError("psi_ring must be positive (sigma = psi_ring**2 would vanish)")
    k = solve_isotropic_rate(dc, aniso, psi, t0)
    a2 = bg.e2
    gbar = a2 * np.eye(3)
    Kbar = a2 * np.diag([k + d for d in aniso])
    ed = EinsteinData(grid, gbar, Kbar, np.zeros(3), psi)
    return complete_modified_data(ed, dc, t0)


def complete_modified_data(ed: EinsteinData, dc: DerivedConstants, t0: float = 0.0) -> EvolutionState:
    """Modified-system data from slice data; the gauge residual vanishes on the slice.

    g_00 = −1, g_0j = 0, g_jk = ḡ, ∂_t g_jk = 2K̄,
    ∂_t g_00 = 2(3ω − ḡ^{ab}K̄_ab), ∂_t g_0j = ḡ^{ab}(∂_a ḡ_bj − ½∂_j ḡ_ab).
    """
    grid = ed.grid
    bg = background_at(dc, t0)
    _check_positive(ed.gbar)
    ginv, _ = spatial_inverse(ed.gbar, check=False)
    trK = np.einsum("ab...,ab...->...", ginv, ed.Kbar)
    dg = grid.gradient(ed.gbar)                         # (a, j, k, ...)
    dt_g0 = (np.einsum("ab...,abj...->j...", ginv, dg)
             - 0.5 * np.einsum("ab...,jab...->j...", ginv, dg))
    e2 = bg.e2
    h = ed.gbar / e2
    dt_h = (2.0 * ed.Kbar - 2.0 * bg.omega * ed.gbar) / e2
    y = np.empty((24,) + grid.shape)
    y[G00] = -1.0
    y[DG00] = 2.0 * (3.0 * bg.omega - trK)
    y[G0] = 0.0
    y[DG0] = dt_g0
    y[H] = sym_unique(h)
    y[DH] = sym_unique(dt_h)
    y[PHI_T] = ed.psi_ring
    y[PHI] = ed.dphi
    return EvolutionState(grid, y, float(t0))


def einstein_data_from_state(state: EvolutionState, dc: DerivedConstants) -> EinsteinData:
    """Slice data induced by a state: ḡ, K̄ (full formula), ∂̄Φ and Ψ̊ = N̂^μ∂_μΦ up to sign."""
    from .diagnostics import normal_derivative_phi, second_fundamental_form

    bg = background_at(dc, state.t)
    gbar = bg.e2 * state.h
    K = second_fundamental_form(state, dc)
    psi = normal_derivative_phi(state, dc)
    return EinsteinData(state.grid, gbar, K, state.phi.copy(), psi)


def _check_positive(g):
    a, b, c = g[0, 0], g[0, 1], g[0, 2]
    d, e, f = g[1, 1], g[1, 2], g[2, 2]
    det = a * (d * f - e * e) - b * (b * f - c * e) + c * (b * e - c * d)
    if not np.all((a > 0) & (a * d - b * b > 0) & (det > 0)):
        raise InitialDataError("slice metric is not positive definite")


__all__ = [
    "PerturbationSpec", "EinsteinData", "InitialDataError", "background_state", "perturb", "perturb_all",
    "perturbation_field", "normalized_perturbation", "homogeneous_constrained_data", "complete_modified_data",
    "einstein_data_from_state", "solve_isotropic_rate", "homogeneous_gauss_residual", "gauss_rhs_homogeneous",
]

"""Run-time diagnostics: weighted norms, energies, constraint residuals,
asymptotic limits, decay-rate fits and geodesics through a stored trajectory."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.ndimage import map_coordinates

from .background import DerivedConstants, background_at
from .fluid import sigma_power
from .grid import PeriodicGrid, multi_indices
from .rhs import build_geometry, local_data_from_array
from .state import DG0, DG00, DH, FULL, G0, G00, H, PAIRS, PHI, PHI_T, EvolutionState, sym_full
from .tensors import DegenerateMetricError, spatial_inverse

# Each unique h_jk pair stands for this many entries of the full 3×3 sum.
PAIR_MULT = np.array([1.0 if j == k else 2.0 for j, k in PAIRS])


def _sqrt(x):
    return np.sqrt(np.maximum(x, 0.0))


# =============================================================================
# Norms
# =============================================================================

BLOCKS = ("g00", "g0", "h", "fluid")


@dataclass
class NormsRecord:
    t: float
    S_g00: float
    S_g0: float
    S_h: float
    S_fluid: float
    S_total: float
    sup_g00: float
    sup_g0: float
    sup_h: float
    sup_fluid: float
    sup_total: float

    def to_dict(self) -> dict:
        return asdict(self)


def norm_blocks(state: EvolutionState, dc: DerivedConstants, N: int) -> dict:
    """The four instantaneous block norms S_{·;N} at the state's time."""
    grid, y = state.grid, state.y
    bg = background_at(dc, state.t)
    Om, q, w = bg.Omega, dc.q, dc.w
    dev = y.copy()
    dev[G00] += 1.0
    dev[PHI_T] = math.exp(w * Om) * y[PHI_T] - dc.psi_bar
    fh = grid.fft(dev)
    plain = _sqrt(grid.sobolev_sq_modes(None, N, fh=fh))
    grad = _sqrt(grid.sobolev_sq_modes(None, N, gradient=True, fh=fh))
    grad_lo = _sqrt(grid.sobolev_sq_modes(None, N - 1, gradient=True, fh=fh[H])) if N >= 1 else 0.0

    eq, eq1, eq2 = math.exp(q * Om), math.exp((q - 1.0) * Om), math.exp((q - 2.0) * Om)
    s_g00 = eq * plain[DG00] + eq * plain[G00] + eq1 * grad[G00]
    s_g0 = float(np.sum(eq1 * plain[DG0] + eq1 * plain[G0] + eq2 * grad[G0]))
    s_h = float(np.sum(PAIR_MULT * (eq * plain[DH] + grad_lo + eq1 * grad[H])))
    phi_grad = math.sqrt(float(np.sum(plain[PHI] ** 2)))
    s_fl = plain[PHI_T] + math.exp((w - 1.0) * Om) * phi_grad
    return {"g00": float(s_g00), "g0": s_g0, "h": s_h, "fluid": float(s_fl)}


def norms(state: EvolutionState, dc: DerivedConstants, N: int, previous: NormsRecord | None = None) -> NormsRecord:
    """Weighted Sobolev norms of the deviation from the background, with running suprema.

    Vector-valued quantities (∂̄f, ∂̄Φ) use the root-sum-square over their
    components; the explicit sums over j and over j, k are plain sums.
    """
    b = norm_blocks(state, dc, N)
    total = b["g00"] + b["g0"] + b["h"] + b["fluid"]
    if previous is None:
        sups = b
    else:
        sups = {"g00": max(previous.sup_g00, b["g00"]), "g0": max(previous.sup_g0, b["g0"]),
                "h": max(previous.sup_h, b["h"]), "fluid": max(previous.sup_fluid, b["fluid"])}
    return NormsRecord(t=state.t, S_g00=b["g00"], S_g0=b["g0"], S_h=b["h"], S_fluid=b["fluid"], S_total=total,
                       sup_g00=sups["g00"], sup_g0=sups["g0"], sup_h=sups["h"], sup_fluid=sups["fluid"],
                       sup_total=sum(sups.values()))


# =============================================================================
# Energies
# =============================================================================

class EnergyError(ArithmeticError):
    pass


@dataclass
class EnergiesRecord:
    t: float
    E_g00: float
    E_g0: float
    E_h: float
    E_fluid: float
    E_total: float
    discarded_fluid_term: float

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_GAMMA_DELTA = {"g00": (0.0, 0.0), "g0": (0.0, 0.0)}


def _geometry(state: EvolutionState, dc: DerivedConstants, check: bool = False):
    bg = background_at(dc, state.t)
    ld = local_data_from_array(state.y, state.grid, bg)
    return build_geometry(ld, bg, check=check), bg


def energies(state: EvolutionState, dc: DerivedConstants, N: int,
             gamma_delta: Mapping[str, tuple] | None = None) -> EnergiesRecord:
    """Energies of the metric blocks and of the fluid, plus the discarded fluid term.

    Metric blocks use ½∫{−g^{00}(∂_t v)² + g^{ab}∂_a v∂_b v − 2γHg^{00}v∂_t v + δH²v²}
    summed over |α| ≤ N with weights e^{2qΩ} (g_00), e^{2(q−1)Ω} (g_0j), and
    e^{2qΩ} plus the unweighted ½∫H²(∂_α h)² for |α| ≥ 1 (h_jk, γ = δ = 0).
    """
    gd = dict(DEFAULT_GAMMA_DELTA)
    if gamma_delta:
        unknown = set(gamma_delta) - set(gd)
        if unknown:
            raise ValueError(f"gamma_delta only applies to blocks {sorted(gd)}, got {sorted(unknown)}")
        gd.update({k: tuple(float(x) for x in v) for k, v in gamma_delta.items()})
    grid, y = state.grid, state.y
    geo, bg = _geometry(state, dc)
    Om, om, Hc, q, w = bg.Omega, bg.omega, dc.H, dc.q, dc.w
    gu00 = geo.inv.gu00
    Gs = geo.inv.gus
    ms = geo.ac.ms
    e2w = math.exp(2.0 * w * Om)

    dev = y.copy()
    dev[G00] += 1.0
    dev[PHI_T] = math.exp(w * Om) * y[PHI_T] - dc.psi_bar
    fh = grid.fft(dev)
    ik = grid.ik
    metric_v = [G00] + list(range(G0.start, G0.stop)) + list(range(H.start, H.stop))
    metric_dt = [DG00] + list(range(DG0.start, DG0.stop)) + list(range(DH.start, DH.stop))

    def quad(v, dtv, dv, gam, dlt):
        dens = (-gu00 * dtv * dtv + np.einsum("ab...,a...,b...->...", Gs, dv, dv)
                - 2.0 * gam * Hc * gu00 * v * dtv + dlt * Hc * Hc * v * v)
        return 0.5 * float(grid.integrate(dens))

    e_g00 = e_g0 = e_h = e_fl = disc = 0.0
    for alpha in multi_indices(N):
        mult = np.ones_like(ik[0])
        for ax, p in enumerate(alpha):
            for _ in range(p):
                mult = mult * ik[ax]
        da = fh * mult
        # ∂_α of every stored field and the spatial gradients of the metric ones.
        D = grid.ifft(da)
        Dg = grid.ifft(np.stack([k * da[metric_v] for k in ik]))      # (3, 10, ...)
        order = sum(alpha)
        gam, dlt = gd["g00"]
        e_g00 += math.exp(2.0 * q * Om) * quad(D[G00], D[DG00], Dg[:, 0], gam, dlt)
        gam, dlt = gd["g0"]
        for j in range(3):
            e_g0 += math.exp(2.0 * (q - 1.0) * Om) * quad(D[G0.start + j], D[DG0.start + j], Dg[:, 1 + j], gam, dlt)
        for u in range(6):
            part = math.exp(2.0 * q * Om) * quad(0.0, D[DH.start + u], Dg[:, 4 + u], 0.0, 0.0)
            if order > 0:
                part += 0.5 * Hc * Hc * float(grid.integrate(D[H.start + u] ** 2))
            e_h += PAIR_MULT[u] * part
        dphi = D[PHI]
        mphi = float(grid.integrate(np.einsum("ab...,a...,b...->...", ms, dphi, dphi)))
        # dev[PHI_T] already carries the e^{wΩ} weight.
        e_fl += 0.5 * float(grid.integrate(D[PHI_T] ** 2)) + 0.5 * e2w * mphi
        disc += (w - 1.0) * om * e2w * mphi
    for name, val in (("g00", e_g00), ("g0", e_g0), ("h", e_h), ("fluid", e_fl)):
        if not val >= 0.0:
            raise EnergyError(f"negative {name} energy {val:.3e}: coercivity lost (check g^00 and gamma/delta)")
    vals = [math.sqrt(v) for v in (e_g00, e_g0, e_h, e_fl)]
    return EnergiesRecord(t=state.t, E_g00=vals[0], E_g0=vals[1], E_h=vals[2], E_fluid=vals[3],
                          E_total=math.sqrt(e_g00 + e_g0 + e_h + e_fl), discarded_fluid_term=disc)


# =============================================================================
# Slice geometry and constraints
# =============================================================================

def ricci_scalar(gs: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Scalar curvature of a Riemannian 3-metric field, spectral derivatives throughout."""
    ginv, _ = spatial_inverse(gs)
    dg = grid.gradient(gs)                                       # dg[d, j, k] = ∂_d g_jk
    low = 0.5 * (np.einsum("jdk...->djk...", dg) + np.einsum("kdj...->djk...", dg) - dg)   # Γ_{d|jk}
    chr_ = np.einsum("ad...,djk...->ajk...", ginv, low)          # Γ^a_jk
    dchr = grid.gradient(chr_)                                   # dchr[b, a, j, k] = ∂_b Γ^a_jk
    ric = (np.einsum("aajk...->jk...", dchr) - np.einsum("jaak...->jk...", dchr)
           + np.einsum("aab...,bjk...->jk...", chr_, chr_) - np.einsum("ajb...,bak...->jk...", chr_, chr_))
    return np.einsum("jk...,jk...->...", ginv, ric)


def _unit_normal_parts(geo):
    """n^α = (−g^{00})^{−1/2} g^{0α}; the future unit normal is N̂ = −n."""
    gu00 = geo.inv.gu00
    if np.any(~(gu00 < 0)):
        raise DegenerateMetricError(1, "g^00 >= 0: constant-t slices are not spacelike")
    lapse_inv = 1.0 / np.sqrt(-gu00)
    return lapse_inv * geo.ginv[0]                              # (4, ...)


def second_fundamental_form(state: EvolutionState, dc: DerivedConstants, geo=None) -> np.ndarray:
    """K_jk = −(∂_j n^α) g_αk − n^α Γ_{jkα}, with n^α = (−g^{00})^{−1/2}g^{0α}.

    The result is symmetrised; its antisymmetric part is pure discretisation error.
    """
    if geo is None:
        geo, _ = _geometry(state, dc)
    n = _unit_normal_parts(geo)
    dn = state.grid.gradient(n)                                  # (j, α, ...)
    K = (-np.einsum("ja...,ak...->jk...", dn, geo.g[:, 1:])
         - np.einsum("a...,jka...->jk...", n, geo.gam[1:, 1:, :]))
    return 0.5 * (K + np.swapaxes(K, 0, 1))


def normal_derivative_phi(state: EvolutionState, dc: DerivedConstants, geo=None) -> np.ndarray:
    """N̂^μ∂_μΦ for the future unit normal N̂ = −(−g^{00})^{−1/2}g^{0μ}∂_μ."""
    if geo is None:
        geo, _ = _geometry(state, dc)
    n = _unit_normal_parts(geo)
    return -(n[0] * state.phi_t + np.einsum("a...,a...->...", n[1:], state.phi))


@dataclass
class ConstraintRecord:
    t: float
    Q_up_L2: float
    Q_up_Linf: float
    Q_down_L2: float
    Q_down_Linf: float
    gauss_L2: float
    gauss_Linf: float
    codazzi_L2: float
    codazzi_Linf: float
    curl_L2: float

    def to_dict(self) -> dict:
        return asdict(self)


def gauss_codazzi_fields(state: EvolutionState, dc: DerivedConstants, geo=None):
    """Pointwise residuals of the Hamiltonian and momentum constraints on the slice.

    Gauss:    R̄ − K_abK^ab + (trK)² − 2Λ − 2T(N̂,N̂),
    Codazzi:  D^aK_aj − D_j trK − T(N̂,∂_j),
    with T(N̂,N̂) = 2σ^s(N̂Φ)² − σ^{s+1}/(s+1) and T(N̂,∂_j) = 2σ^s(N̂Φ)∂_jΦ.
    """
    grid = state.grid
    if geo is None:
        geo, _ = _geometry(state, dc)
    bg = geo.bg
    s = dc.s
    e2 = bg.e2
    h = state.h
    hinv, _ = spatial_inverse(h)
    ginv_s = hinv / e2                                           # inverse of the slice metric g_jk
    K = second_fundamental_form(state, dc, geo)
    Kmix = np.einsum("ja...,ak...->jk...", ginv_s, K)            # K^j_k
    trK = np.einsum("jj...->...", Kmix)
    KK = np.einsum("jk...,kj...->...", Kmix, Kmix)
    Rbar = ricci_scalar(h, grid) / e2
    sig = geo.sigma
    NPhi = normal_derivative_phi(state, dc, geo)
    sig_s = sigma_power(sig, s)
    T_nn = 2.0 * sig_s * NPhi * NPhi - sig_s * sig / (s + 1.0)
    gauss = Rbar - KK + trK * trK - 2.0 * dc.lam - 2.0 * T_nn

    # Levi-Civita connection of the slice: Γ^c_ab = Γ^c_ab[h] (the constant factor drops out).
    dh = grid.gradient(h)
    low = 0.5 * (np.einsum("jdk...->djk...", dh) + np.einsum("kdj...->djk...", dh) - dh)
    chr_ = np.einsum("cd...,dab...->cab...", hinv, low)
    dK = grid.gradient(K)                                        # dK[b, a, j] = ∂_b K_aj
    DK = (dK - np.einsum("cba...,cj...->baj...", chr_, K) - np.einsum("cbj...,ac...->baj...", chr_, K))
    divK = np.einsum("ab...,baj...->j...", ginv_s, DK)
    codazzi = divK - grid.gradient(trK) - 2.0 * sig_s * NPhi * state.phi
    return gauss, codazzi


def curl_residual(state: EvolutionState) -> float:
    grid = state.grid
    dphi = grid.gradient(state.phi)                              # dphi[i, j] = ∂_i Φ_j
    tot = 0.0
    for i, j in ((0, 1), (0, 2), (1, 2)):
        tot += grid.l2_sq(dphi[i, j] - dphi[j, i])
    return math.sqrt(tot)


def constraint_residuals(state: EvolutionState, dc: DerivedConstants) -> ConstraintRecord:
    from .tensors import gauge_residual

    grid = state.grid
    geo, bg = _geometry(state, dc)
    Qup, Qdown = gauge_residual(geo.g, geo.ginv, geo.gam, bg.omega)
    gauss, codazzi = gauss_codazzi_fields(state, dc, geo)
    return ConstraintRecord(
        t=state.t,
        Q_up_L2=grid.l2(Qup), Q_up_Linf=float(np.max(np.abs(Qup))),
        Q_down_L2=grid.l2(Qdown), Q_down_Linf=float(np.max(np.abs(Qdown))),
        gauss_L2=grid.l2(gauss), gauss_Linf=float(np.max(np.abs(gauss))),
        codazzi_L2=grid.l2(codazzi), codazzi_Linf=float(np.max(np.abs(codazzi))),
        curl_L2=curl_residual(state))


# =============================================================================
# Fluid monitors
# =============================================================================

def z_ratio_bound(state: EvolutionState, dc: DerivedConstants) -> float:
    """max_j ‖z_j‖_{L∞} e^{(1−w)Ω} with z_j = e^{−Ω}∂_jΦ/∂_tΦ."""
    bg = background_at(dc, state.t)
    z = math.exp(-bg.Omega) * state.phi / state.phi_t
    return float(np.max(np.abs(z))) * math.exp((1.0 - dc.w) * bg.Omega)


# =============================================================================
# Rate fits
# =============================================================================

@dataclass
class RateFit:
    rate: float
    r2: float
    stderr: float
    ci_low: float
    ci_high: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def _window(series, window):
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("series must be a sequence of (t, value) pairs")
    if window is not None:
        lo, hi = window
        arr = arr[(arr[:, 0] >= lo) & (arr[:, 0] <= hi)]
    return arr


def _flat_tolerance(y: np.ndarray) -> float:
    return len(y) * (64.0 * np.finfo(float).eps * max(1.0, float(np.abs(y).max()))) ** 2


def fit_rate(series: Sequence, window: tuple | None = None, confidence: float = 0.95) -> RateFit:
    """Least-squares slope of log(value) against t, negated, with a t-based confidence interval."""
    arr = _window(series, window)
    if len(arr) < 8:
        raise ValueError(f"rate fit needs at least 8 points in the window, got {len(arr)}")
    t, v = arr[:, 0], arr[:, 1]
    if np.any(~(v > 0)):
        raise ValueError("rate fit needs strictly positive values in the window")
    y = np.log(v)
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    # A flat series (up to rounding in the logarithm) is fitted perfectly by slope zero.
    flat = ss_tot <= _flat_tolerance(y)
    r2 = 1.0 if flat else 1.0 - ss_res / ss_tot
    n = len(t)
    sxx = float(np.sum((t - t.mean()) ** 2))
    stderr = math.sqrt(ss_res / (n - 2) / sxx) if sxx > 0 else float("inf")
    half = float(stats.t.ppf(0.5 + confidence / 2.0, n - 2)) * stderr
    rate = -float(slope)
    return RateFit(rate=rate, r2=r2, stderr=stderr, ci_low=rate - half, ci_high=rate + half, n=n)


def decay_rate_fit(series: Sequence, window: tuple | None = None) -> tuple:
    """(rate, r²) for value ≈ C e^{−rate·t} over the window."""
    f = fit_rate(series, window)
    return f.rate, f.r2


# =============================================================================
# Asymptotics
# =============================================================================

@dataclass
class AsymptoticsRecord:
    t_final: float
    g_inf: np.ndarray
    g_inf_up: np.ndarray
    psi_inf: np.ndarray
    dphi_inf: np.ndarray
    rates: dict = field(default_factory=dict)
    fit_failures: dict = field(default_factory=dict)
    fit_windows: dict = field(default_factory=dict)
    cauchy_times: list = field(default_factory=list)
    cauchy_decrements: list = field(default_factory=list)
    series: dict = field(default_factory=dict)

    @property
    def g_inf_positive_definite(self) -> bool:
        try:
            spatial_inverse(self.g_inf)
        except DegenerateMetricError:
            return False
        return True

    @property
    def cauchy_monotone_last3(self) -> bool:
        d = self.cauchy_decrements[-3:]
        return len(d) == 3 and d[0] > d[1] > d[2]

    def summary(self) -> dict:
        """JSON-ready scalars (field dumps are written separately)."""
        return {
            "t_final": self.t_final,
            "g_inf_positive_definite": self.g_inf_positive_definite,
            "rates": {k: v.to_dict() for k, v in self.rates.items()},
            "fit_failures": dict(self.fit_failures),
            "fit_windows": {k: list(v) for k, v in self.fit_windows.items()},
            "cauchy_times": list(self.cauchy_times),
            "cauchy_decrements": list(self.cauchy_decrements),
            "cauchy_monotone_last3": self.cauchy_monotone_last3,
            "psi_inf_mean": float(np.mean(self.psi_inf)),
        }


def _snapshots(trajectory):
    snaps = getattr(trajectory, "snapshots", trajectory)
    return [(float(t), np.asarray(y)) for t, y in snaps]


def asymptotic_extract(trajectory, dc: DerivedConstants, grid: PeriodicGrid | None = None, N: int = 3,
                       fit_window: tuple | None = None, n_cauchy: int = 6,
                       noise_floor: float = 1e-6) -> AsymptoticsRecord:
    """Final-time limits, tail decay rates and Cauchy decrements.

    ``trajectory`` is anything with ``snapshots`` = [(t, packed array)] (or
    that list itself).  The default fit window is [0.1 T, 0.7 T] for final
    time T, which keeps away from both the initial transient and the end
    point, where subtracting the final-time limit biases the fit.  Values
    below ``noise_floor`` times the series maximum are left out of fits.
    """
    snaps = _snapshots(trajectory)
    if len(snaps) < 8:
        raise ValueError("asymptotic extraction needs at least 8 snapshots")
    grid = grid or getattr(trajectory, "grid", None) or PeriodicGrid(snaps[0][1].shape[-1])
    T, yT = snaps[-1]
    t0 = snaps[0][0]
    if T - t0 < 5.0 / (dc.q * dc.H):
        # Short trajectories are processed but flagged.
        short = True
    else:
        short = False
    bgT = background_at(dc, T)
    g_inf = sym_full(yT[H])
    g_inf_up, _ = spatial_inverse(g_inf, check=False)
    psi_inf = math.exp(dc.w * bgT.Omega) * yT[PHI_T]
    dphi_inf = yT[PHI].copy()
    Nd = max(N - 2, 0)

    ser = {"h_minus_ginf": [], "dt_h": [], "psi_minus_psiinf": [], "dphi_minus_dphiinf": []}
    for t, y in snaps:
        bg = background_at(dc, t)
        ser["h_minus_ginf"].append((t, math.sqrt(float(np.sum(PAIR_MULT * np.array(
            [grid.l2_sq(y[H.start + u] - yT[H.start + u]) for u in range(6)]))))))
        ser["dt_h"].append((t, math.sqrt(float(np.sum(PAIR_MULT * grid.sobolev_sq_modes(y[DH], Nd))))))
        ser["psi_minus_psiinf"].append((t, grid.l2(math.exp(dc.w * bg.Omega) * y[PHI_T] - psi_inf)))
        ser["dphi_minus_dphiinf"].append((t, grid.l2(y[PHI] - dphi_inf)))

    window = fit_window or (t0 + 0.1 * (T - t0), t0 + 0.7 * (T - t0))
    rec = AsymptoticsRecord(t_final=T, g_inf=g_inf, g_inf_up=g_inf_up, psi_inf=psi_inf, dphi_inf=dphi_inf,
                            series=ser)
    if short:
        rec.fit_failures["trajectory"] = f"shorter than 5/(qH) = {5.0 / (dc.q * dc.H):.3g}"
    for name, s in ser.items():
        arr = _window(s, window)
        # Points at the round-off floor carry no rate information.
        floor = noise_floor * max(v for _, v in s)
        arr = arr[arr[:, 1] > floor]
        if len(arr) >= 2 and arr[-1, 1] > arr[0, 1]:
            rec.fit_failures[name] = "non-monotone tail: value grows across the fit window"
            continue
        try:
            rec.rates[name] = fit_rate(arr)
            rec.fit_windows[name] = (float(arr[0, 0]), float(arr[-1, 0]))
        except ValueError as exc:
            rec.fit_failures[name] = str(exc)

    # Cauchy decrements of the g_inf extraction on equally spaced extraction times.
    times = np.array([t for t, _ in snaps])
    targets = np.linspace(t0 + 0.5 * (T - t0), T, n_cauchy + 1)
    idx = sorted({int(np.argmin(np.abs(times - tt))) for tt in targets})
    for i0, i1 in zip(idx[:-1], idx[1:]):
        y0, y1 = snaps[i0][1], snaps[i1][1]
        d = math.sqrt(float(np.sum(PAIR_MULT * np.array(
            [grid.l2_sq(y1[H.start + u] - y0[H.start + u]) for u in range(6)]))))
        rec.cauchy_times.append(snaps[i1][0])
        rec.cauchy_decrements.append(d)
    return rec


# =============================================================================
# Geodesics
# =============================================================================

class GeodesicError(ValueError):
    pass


def _background_christoffel(bg) -> np.ndarray:
    """Γ^μ_{αβ} of −dt² + e^{2Ω}δ."""
    G = np.zeros((4, 4, 4))
    for j in range(1, 4):
        G[0, j, j] = bg.omega * bg.e2
        G[j, 0, j] = G[j, j, 0] = bg.omega
    return G


def _background_metric(bg) -> np.ndarray:
    g = np.diag([-1.0, bg.e2, bg.e2, bg.e2])
    return g


class SpacetimeInterpolator:
    """Metric and Christoffel symbols at arbitrary (t, x) from stored snapshots.

    Each snapshot is converted to grid fields of the deviation from the
    background (g − g̃ and Γ^μ_{αβ} − Γ̃^μ_{αβ}); these are interpolated
    trilinearly in space and by four-point Lagrange cubics in time, and the
    analytic background is added back.  Snapshot fields are kept in a small
    LRU cache.
    """

    def __init__(self, trajectory, dc: DerivedConstants, grid: PeriodicGrid | None = None, cache_size: int = 8):
        self.snaps = _snapshots(trajectory)
        if len(self.snaps) < 4:
            raise GeodesicError("need at least four snapshots for cubic time interpolation")
        self.times = np.array([t for t, _ in self.snaps])
        if np.any(np.diff(self.times) <= 0):
            raise GeodesicError("snapshot times must increase strictly")
        self.dc = dc
        self.grid = grid or getattr(trajectory, "grid", None) or PeriodicGrid(self.snaps[0][1].shape[-1])
        self.cache_size = cache_size
        self._cache: OrderedDict = OrderedDict()
        h0 = sym_full(self.snaps[0][1][H])
        self._gbar0 = background_at(dc, self.times[0]).e2 * h0       # initial slice metric field

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def _fields(self, i: int) -> np.ndarray:
        if i in self._cache:
            self._cache.move_to_end(i)
            return self._cache[i]
        t, y = self.snaps[i]
        state = EvolutionState(self.grid, y, t)
        geo, bg = _geometry(state, self.dc)
        chris = np.einsum("mk...,akb...->mab...", geo.ginv, geo.gam)     # Γ^μ_{αβ}
        chris = chris - _background_christoffel(bg)[..., None, None, None]
        gdev = geo.g - _background_metric(bg)[..., None, None, None]
        iu = np.triu_indices(4)
        out = np.concatenate([gdev[iu[0], iu[1]], chris[:, iu[0], iu[1]].reshape((40,) + self.grid.shape)])
        self._cache[i] = out
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return out

    def _spatial(self, fields: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Trilinear periodic interpolation of each leading field at points x (m, 3)."""
        idx = ((x + math.pi) / self.grid.spacing).T                       # (3, m)
        return np.stack([map_coordinates(f, idx, order=1, mode="grid-wrap") for f in fields])

    def _stencil(self, t: float):
        if t < self.t_min - 1e-12 or t > self.t_max + 1e-12:
            raise GeodesicError(f"time {t:.6g} outside stored range [{self.t_min}, {self.t_max}]")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i - 1, 0), len(self.times) - 4)
        nodes = list(range(i, i + 4))
        ts = self.times[nodes]
        wts = []
        for a in range(4):
            w = 1.0
            for b in range(4):
                if b != a:
                    w *= (t - ts[b]) / (ts[a] - ts[b])
            wts.append(w)
        return nodes, wts

    def evaluate(self, t: np.ndarray, x: np.ndarray):
        """(g_{μν}, Γ^μ_{αβ}) at points (t_i, x_i); shapes (m, 4, 4) and (m, 4, 4, 4)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = len(t)
        dev = np.zeros((50, m))
        # Points are grouped by their time stencil (typically all share one).
        groups: dict = {}
        for p in range(m):
            nodes, wts = self._stencil(float(t[p]))
            groups.setdefault(tuple(nodes), []).append((p, wts))
        for nodes, members in groups.items():
            pts = np.array([p for p, _ in members])
            W = np.array([w for _, w in members])                         # (k, 4)
            for a, node in enumerate(nodes):
                vals = self._spatial(self._fields(node), x[pts])          # (50, k)
                dev[:, pts] += vals * W[:, a]
        iu = np.triu_indices(4)
        g = np.zeros((m, 4, 4))
        g[:, iu[0], iu[1]] = dev[:10].T
        g[:, iu[1], iu[0]] = dev[:10].T
        G = np.zeros((m, 4, 4, 4))
        c = dev[10:].reshape(4, 10, m)
        G[:, :, iu[0], iu[1]] = np.moveaxis(c, 2, 0)
        G[:, :, iu[1], iu[0]] = np.moveaxis(c, 2, 0)
        for p in range(m):
            bg = background_at(self.dc, float(t[p]))
            g[p] += _background_metric(bg)
            G[p] += _background_christoffel(bg)
        return g, G

    def initial_slice_metric(self, x: np.ndarray) -> np.ndarray:
        """ḡ_ab at spatial points x (m, 3), shape (m, 3, 3)."""
        vals = self._spatial(self._gbar0.reshape((9,) + self.grid.shape), np.atleast_2d(x))
        return vals.T.reshape(-1, 3, 3)


@dataclass
class GeodesicResult:
    s: np.ndarray                 # (K,)
    x: np.ndarray                 # (K, m, 4)
    u: np.ndarray                 # (K, m, 4)
    spatial_length: np.ndarray    # (K, m) cumulative ∫√(ḡ_ab γ̇^a γ̇^b) ds
    norm: np.ndarray              # (K, m) g_{αβ}γ̇^αγ̇^β

    @property
    def min_u0(self) -> np.ndarray:
        return self.u[:, :, 0].min(axis=0)

    @property
    def max_u0(self) -> np.ndarray:
        return self.u[:, :, 0].max(axis=0)

    @property
    def u0_initial(self) -> np.ndarray:
        return self.u[0, :, 0]

    @property
    def norm_drift(self) -> np.ndarray:
        return np.abs(self.norm - self.norm[0]).max(axis=0)

    def length_tail_fraction(self, s_cut: float) -> np.ndarray:
        """Share of the accumulated spatial length gathered beyond affine parameter s_cut."""
        L = self.spatial_length
        i = int(np.searchsorted(self.s, s_cut, side="left"))
        i = min(i, len(self.s) - 1)
        total = L[-1]
        tail = L[-1] - L[i]
        return np.where(total > 0, tail / np.where(total > 0, total, 1.0), 0.0)

    def length_tail_fraction_time(self, t_cut: float) -> np.ndarray:
        """Share of the spatial length gathered after coordinate time t_cut, per geodesic."""
        out = np.zeros(self.x.shape[1])
        for p in range(self.x.shape[1]):
            i = int(np.searchsorted(self.x[:, p, 0], t_cut, side="left"))
            i = min(i, len(self.s) - 1)
            tot = self.spatial_length[-1, p]
            out[p] = (tot - self.spatial_length[i, p]) / tot if tot > 0 else 0.0
        return out


def geodesic_integrate(trajectory, x0, u0, affine_length: float, dc: DerivedConstants, ds: float = 0.01,
                       grid: PeriodicGrid | None = None, interpolator: SpacetimeInterpolator | None = None,
                       record_every: int = 1) -> GeodesicResult:
    """RK4 integration of γ̈^μ + Γ^μ_{αβ}γ̇^αγ̇^β = 0 through the stored spacetime.

    ``x0`` and ``u0`` are (4,) or (m, 4) for m geodesics integrated together.
    The spatial length ∫√(ḡ_ab γ̇^aγ̇^b) ds, with ḡ the initial slice metric,
    is carried as an extra ODE component.
    """
    interp = interpolator or SpacetimeInterpolator(trajectory, dc, grid)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    u0 = np.atleast_2d(np.asarray(u0, dtype=float)).copy()
    if x0.shape != u0.shape or x0.shape[1] != 4:
        raise GeodesicError("x0 and u0 must have matching shapes (4,) or (m, 4)")
    if ds <= 0 or affine_length <= 0:
        raise GeodesicError("ds and affine_length must be positive")
    g0, _ = interp.evaluate(x0[:, 0], x0[:, 1:])
    nrm0 = np.einsum("pab,pa,pb->p", g0, u0, u0)
    if np.any(nrm0 > 1e-12 * np.einsum("pa,pa->p", u0, u0)):
        raise GeodesicError("initial velocity is spacelike")
    if np.any(u0[:, 0] <= 0):
        raise GeodesicError("initial velocity is not future directed")

    def deriv(x, u):
        _, G = interp.evaluate(x[:, 0], x[:, 1:])
        acc = -np.einsum("pmab,pa,pb->pm", G, u, u)
        gb = interp.initial_slice_metric(x[:, 1:])
        dl = np.sqrt(np.maximum(np.einsum("pab,pa,pb->p", gb, u[:, 1:], u[:, 1:]), 0.0))
        return u, acc, dl

    nsteps = int(math.ceil(affine_length / ds - 1e-9))
    h = affine_length / nsteps
    x, u, L = x0, u0, np.zeros(len(x0))
    S, X, U, LL, NN = [0.0], [x.copy()], [u.copy()], [L.copy()], [nrm0]
    for k in range(1, nsteps + 1):
        k1 = deriv(x, u)
        k2 = deriv(x + 0.5 * h * k1[0], u + 0.5 * h * k1[1])
        k3 = deriv(x + 0.5 * h * k2[0], u + 0.5 * h * k2[1])
        k4 = deriv(x + h * k3[0], u + h * k3[1])
        x = x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        u = u + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        L = L + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if k % record_every == 0 or k == nsteps:
            g, _ = interp.evaluate(x[:, 0], x[:, 1:])
            S.append(k * h)
            X.append(x.copy())
            U.append(u.copy())
            LL.append(L.copy())
            NN.append(np.einsum("pab,pa,pb->p", g, u, u))
    return GeodesicResult(s=np.array(S), x=np.array(X), u=np.array(U), spatial_length=np.array(LL),
                          norm=np.array(NN))


def random_timelike_geodesics(rng: np.random.Generator, count: int, interp: SpacetimeInterpolator,
                              max_speed: float = 0.5):
    """Initial data for ``count`` unit timelike geodesics from random points and directions.

    Spatial velocities are drawn so that the speed measured in the
    background slice is at most ``max_speed``; γ̇⁰ then follows from
    g(γ̇, γ̇) = −1.
    """
    t0 = interp.t_min
    x = np.column_stack([np.full(count, t0), rng.uniform(-math.pi, math.pi, (count, 3))])
    g, _ = interp.evaluate(x[:, 0], x[:, 1:])
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    speed = rng.uniform(0.0, max_speed, count)
    bg = background_at(interp.dc, t0)
    v = dirs * (speed * math.exp(-bg.Omega))[:, None]
    u = np.zeros((count, 4))
    for p in range(count):
        # Solve g00 a² + 2 g0j v^j a + g_jk v^j v^k = −1 for a = γ̇⁰ with γ̇^j = a v^j.
        A = g[p, 0, 0] + 2.0 * g[p, 0, 1:] @ v[p] + v[p] @ g[p, 1:, 1:] @ v[p]
        if not A < 0:
            raise GeodesicError("drawn velocity is not timelike")
        a = 1.0 / math.sqrt(-A)
        u[p, 0] = a
        u[p, 1:] = a * v[p]
    return x, u


__all__ = [
    "NormsRecord", "norms", "norm_blocks", "EnergiesRecord", "EnergyError", "energies", "ConstraintRecord",
    "constraint_residuals", "gauss_codazzi_fields", "second_fundamental_form", "normal_derivative_phi",
    "ricci_scalar", "curl_residual", "z_ratio_bound", "RateFit", "fit_rate", "decay_rate_fit",
    "AsymptoticsRecord", "asymptotic_extract", "SpacetimeInterpolator", "GeodesicResult", "GeodesicError",
    "geodesic_integrate", "random_timelike_geodesics",
]

"""Right-hand sides of the modified irrotational Euler–Einstein system.

Two independent evaluation paths are provided.  The decomposed path writes
each metric equation as a damped wave equation plus error terms Δ built from
the long polynomial expressions of the decomposition; it is what the
integrator uses.  The direct path assembles the same reduced wave operators
from A_{μν}, the gauge source terms and the fluid source, and solves the
quasilinear fluid equation without the acoustical-metric split.  Agreement of
the two is tested on random states.

Every path returns reduced wave-operator values □̂v = g^{αβ}∂_α∂_β v, which
:func:`isolate_dtt` turns into ∂_t² v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .background import BackgroundPoint, DerivedConstants, background_at
from .fluid import AcousticalPoint, acoustical_metric, check_acoustical_definite, enthalpy_sq, raised_gradient, sigma_power
from .grid import PeriodicGrid
from .state import DH, DG0, DG00, FULL, G0, G00, H, NFIELDS, PAIRS, PHI, PHI_T, sym_unique
from .tensors import (DegenerateMetricError, InverseMetricPoint, MetricJet, christoffel_lowered,
                      contracted_christoffel, delta_gamma, invert_metric, principal_raised_christoffel,
                      raised_christoffel_direct, _e)

# Class-1 breakdown threshold on |g^00| for isolating ∂_t².
GU00_MIN = 0.1


@dataclass
class LocalData:
    """Everything the right-hand side reads at a set of points.

    Second spatial derivatives carry their two derivative indices first:
    dd_g0[a, b, j] = ∂_a∂_b g_0j and dd_h[a, b, j, k] = ∂_a∂_b h_jk.
    grad_dt_*[a, ...] = ∂_a ∂_t(...).  grad_phi[a, b] = ∂_a Φ_b.
    """

    jet: MetricJet
    dd_g00: np.ndarray
    dd_g0: np.ndarray
    dd_h: np.ndarray
    grad_dt_g00: np.ndarray
    grad_dt_g0: np.ndarray
    grad_dt_h: np.ndarray
    phi_t: np.ndarray
    phi: np.ndarray
    grad_phi_t: np.ndarray
    grad_phi: np.ndarray


@dataclass
class Geometry:
    """Pointwise derived quantities, recomputed on every right-hand side call."""

    ld: LocalData
    bg: BackgroundPoint
    inv: InverseMetricPoint
    g: np.ndarray
    ginv: np.ndarray
    dg: np.ndarray
    gam: np.ndarray
    sigma: np.ndarray
    ac: AcousticalPoint

    # Shorthands used throughout the Δ polynomials.
    @property
    def jet(self):
        return self.ld.jet


def build_geometry(ld: LocalData, bg: BackgroundPoint, check: bool = True) -> Geometry:
    jet = ld.jet
    if check and not (np.all(np.isfinite(jet.g00)) and np.all(np.isfinite(jet.h))
                      and np.all(np.isfinite(ld.phi_t))):
        raise DegenerateMetricError(4, "non-finite values in the state")
    m = jet.metric()
    inv = invert_metric(m, check=check)
    g = m.full()
    ginv = inv.full()
    dg = jet.dg()
    gam = christoffel_lowered(dg)
    sigma = enthalpy_sq(inv, ld.phi_t, ld.phi, check=check)
    ac = acoustical_metric(inv, ld.phi_t, ld.phi, bg.s, jet.Omega, check=check)
    return Geometry(ld=ld, bg=bg, inv=inv, g=g, ginv=ginv, dg=dg, gam=gam, sigma=sigma, ac=ac)


# ---------------------------------------------------------------------------
# Error terms of the decomposition
# ---------------------------------------------------------------------------

@dataclass
class DeltaTerms:
    dA00: np.ndarray
    dA0: np.ndarray
    dAs: np.ndarray
    dC00: np.ndarray
    dC0: np.ndarray
    d00: np.ndarray
    d0: np.ndarray
    ds: np.ndarray
    dphi: np.ndarray
    f_val: np.ndarray
    dgamma: np.ndarray


def delta_A(geo: Geometry):
    """Δ_{A,00}, Δ_{A,0j}, Δ_{A,jk} term by term."""
    jet, inv, gm = geo.jet, geo.inv, geo.gam
    G00, G0, G = inv.gu00, inv.gu0, inv.gus
    om, e2 = jet.omega, jet.e2
    dtg00, dtg0 = jet.dt_g00, jet.dt_g0
    dg00, dg0 = jet.grad_g00, jet.grad_g0
    dtgs, dgs = jet.spatial_derivs()
    g0 = jet.g0

    T000 = gm[0, 0, 0]
    T00s = gm[0, 0, 1:]      # Γ_00a
    T0s0 = gm[0, 1:, 0]      # Γ_0j0
    Ts0s = gm[1:, 0, 1:]     # Γ_a0b  [a, b]
    T0ss = gm[0, 1:, 1:]     # Γ_0ja  [j, a]
    Tsss = gm[1:, 1:, 1:]    # Γ_ajb  [a, j, b]

    # W[b, l] = g^{ab}∂_t g_al − 2ωδ^b_l in its rescaled form.
    W = e2 * _e("ab...,al...->bl...", G, jet.dt_h) - 2.0 * om * _e("b...,l...->bl...", G0, g0)
    V = e2 * jet.dt_h         # ∂_t g_aj − 2ω g_aj
    sdg0 = dg0 + np.swapaxes(dg0, 0, 1)   # ∂_a g_0l + ∂_l g_0a  [a, l]
    adg0 = dg0 - np.swapaxes(dg0, 0, 1)   # ∂_a g_0j − ∂_j g_0a  [a, j]

    A00 = (G00 ** 2 * (dtg00 ** 2 - T000 ** 2)
           + G00 * (2.0 * dtg00 * _e("a...,a...->...", G0, dtg0 + dg00) - 4.0 * T000 * _e("a...,a...->...", G0, T00s))
           + G00 * (_e("ab...,a...,b...->...", G, dtg0, dtg0) + _e("ab...,a...,b...->...", G, dg00, dg00)
                    - 2.0 * _e("ab...,a...,b...->...", G, T00s, T00s))
           + (2.0 * dtg00 * _e("a...,b...,ab...->...", G0, G0, dg0)
              + 2.0 * _e("a...,b...,b...,a...->...", G0, G0, dtg0, dg00)
              - 2.0 * T000 * _e("a...,b...,ab...->...", G0, G0, Ts0s)
              - 2.0 * _e("a...,b...,b...,a...->...", G0, G0, T00s, T00s))
           + (2.0 * _e("ab...,l...,a...,lb...->...", G, G0, dtg0, dg0)
              + 2.0 * _e("ab...,l...,b...,al...->...", G, G0, dg00, dg0)
              - 4.0 * _e("ab...,l...,a...,lb...->...", G, G0, T00s, Ts0s))
           + _e("ab...,lm...,al...,bm...->...", G, G, dg0, dg0)
           + 0.5 * _e("lm...,bl...,bm...->...", G, W, sdg0)
           - 0.25 * _e("ab...,lm...,al...,bm...->...", G, G, sdg0, sdg0)
           - 0.25 * _e("bl...,lb...->...", W, W))

    A0 = (G00 ** 2 * (dtg00 * dtg0 - T000 * T0s0)
          + G00 * (dtg00 * _e("a...,aj...->j...", G0, dtgs + dg0)
                   + dtg0 * _e("a...,a...->...", G0, dtg0 + dg00)
                   - 2.0 * T000 * _e("a...,ja...->j...", G0, T0ss)
                   - 2.0 * T0s0 * _e("a...,a...->...", G0, T00s))
          + G00 * _e("aj...,a...->j...", W, dtg0 - 0.5 * dg00)
          + 0.5 * G00 * _e("ab...,a...,bj...->j...", G, dg00, sdg0)
          + (dtg00 * _e("a...,b...,abj...->j...", G0, G0, dgs)
             + _e("a...,b...,b...,aj...->j...", G0, G0, dtg0, dg0)
             + _e("a...,b...,a...,bj...->j...", G0, G0, dg00, dtgs)
             + _e("a...,b...,ab...->...", G0, G0, dg0) * dtg0
             - T000 * _e("a...,b...,ajb...->j...", G0, G0, Tsss)
             - 2.0 * _e("a...,b...,b...,ja...->j...", G0, G0, T00s, T0ss)
             - _e("a...,b...,ab...->...", G0, G0, Ts0s) * T0s0)
          + (_e("ab...,l...,a...,lbj...->j...", G, G0, dtg0, dgs)
             + _e("ab...,l...,la...,bj...->j...", G, G0, dg0, dtgs)
             + _e("ab...,l...,b...,alj...->j...", G, G0, dg00, dgs)
             + _e("ab...,l...,bl...,aj...->j...", G, G0, dg0, dg0)
             - 2.0 * _e("ab...,l...,a...,ljb...->j...", G, G0, T00s, Tsss))
          - (_e("ab...,l...,la...,jb...->j...", G, G0, sdg0, T0ss)
             - 0.5 * _e("ab...,l...,la...,bj...->j...", G, G0, dtgs, adg0))
          + om * _e("a...,aj...->j...", G0, V)
          + 0.5 * _e("l...,bl...,bj...->j...", G0, W, dtgs)
          + (_e("ab...,lm...,al...,bmj...->j...", G, G, dg0, dgs)
             - 0.5 * _e("ab...,lm...,al...,bjm...->j...", G, G, sdg0, Tsss))
          + 0.5 * _e("ab...,ma...,bjm...->j...", G, W, Tsss))

    As = (G00 ** 2 * (_e("j...,k...->jk...", dtg0, dtg0) - _e("j...,k...->jk...", T0s0, T0s0))
          + G00 * (_e("j...,a...,ak...->jk...", dtg0, G0, dtgs + dg0)
                   + _e("k...,a...,aj...->jk...", dtg0, G0, dtgs + dg0)
                   - 2.0 * _e("j...,a...,ka...->jk...", T0s0, G0, T0ss)
                   - 2.0 * _e("k...,a...,ja...->jk...", T0s0, G0, T0ss))
          + G00 * (_e("ab...,aj...,bk...->jk...", G, dg0, dg0)
                   - 0.5 * _e("ab...,aj...,bk...->jk...", G, adg0, adg0))
          - 0.5 * G00 * (_e("bj...,bk...->jk...", W, adg0) + _e("ak...,aj...->jk...", W, adg0))
          - om * G00 * _e("k...,a...,aj...->jk...", g0, G0, dtgs)
          + 0.5 * G00 * _e("bj...,bk...->jk...", W, V)
          + (_e("a...,b...,j...,abk...->jk...", G0, G0, dtg0, dgs)
             + _e("a...,b...,bj...,ak...->jk...", G0, G0, dtgs, dg0)
             + _e("a...,b...,aj...,bk...->jk...", G0, G0, dg0, dtgs)
             + _e("a...,b...,abj...,k...->jk...", G0, G0, dgs, dtg0)
             - _e("j...,a...,b...,akb...->jk...", T0s0, G0, G0, Tsss)
             - 2.0 * _e("a...,b...,jb...,ka...->jk...", G0, G0, T0ss, T0ss)
             - _e("a...,b...,ajb...,k...->jk...", G0, G0, Tsss, T0s0))
          + (_e("ab...,l...,aj...,lbk...->jk...", G, G0, dtgs, dgs)
             + _e("ab...,l...,laj...,bk...->jk...", G, G0, dgs, dtgs)
             + _e("ab...,l...,bj...,alk...->jk...", G, G0, dg0, dgs)
             + _e("ab...,l...,blj...,ak...->jk...", G, G0, dgs, dg0)
             - 2.0 * _e("ab...,l...,ja...,lkb...->jk...", G, G0, T0ss, Tsss)
             - 2.0 * _e("ab...,l...,lja...,kb...->jk...", G, G0, Tsss, T0ss))
          + (_e("ab...,ml...,alj...,bmk...->jk...", G, G, dgs, dgs)
             - _e("ab...,ml...,ajl...,bkm...->jk...", G, G, Tsss, Tsss)))
    return A00, A0, As


def delta_C(geo: Geometry):
    """Δ_{C,00} and Δ_{C,0j}."""
    jet, inv, gm = geo.jet, geo.inv, geo.gam
    G00, G0, G = inv.gu00, inv.gu0, inv.gus
    om, e2 = jet.omega, jet.e2
    g00, g0 = jet.g00, jet.g0
    G0g0 = _e("a...,a...->...", G0, g0)
    trdth = e2 * _e("ab...,ab...->...", G, jet.dt_h) - 2.0 * om * G0g0
    C00 = (-6.0 / g00 * om ** 2 * ((g00 + 1.0) ** 2 - G0g0)
           - om * (G00 + 1.0) * trdth
           + 2.0 * om * (G00 + 1.0) * _e("ab...,ab...->...", G, jet.grad_g0)
           + om * (G00 + 1.0) * (G00 - 1.0) * jet.dt_g00
           + 2.0 * om * G00 * _e("a...,a...->...", G0, gm[0, 1:, 0] + 2.0 * gm[0, 0, 1:])
           + 4.0 * om * _e("a...,b...,ab...->...", G0, G0, gm[0, 1:, 1:])
           + 2.0 * om * _e("ab...,l...,alb...->...", G, G0, gm[1:, 1:, 1:]))
    adg0 = jet.grad_g0 - np.swapaxes(jet.grad_g0, 0, 1)
    C0 = (2.0 * om ** 2 * (G00 + 1.0) * g0
          - 2.0 * om * _e("a...,aj...->j...", G0, e2 * jet.dt_h + adg0))
    return C00, C0


def f_of(sigma, phi_t, s):
    """f(∂Φ) = 2σ^s(∂_tΦ)² − (s/(s+1))σ^{s+1}."""
    ss = sigma_power(sigma, s)
    return 2.0 * ss * phi_t * phi_t - s / (s + 1.0) * ss * sigma


def delta_terms(geo: Geometry) -> DeltaTerms:
    jet, bg, inv = geo.jet, geo.bg, geo.inv
    G00, G0, G = inv.gu00, inv.gu0, inv.gus
    s, H, om = bg.s, bg.H, jet.omega
    ld = geo.ld
    phi_t, phi = ld.phi_t, ld.phi
    sig = geo.sigma
    sig_s = sigma_power(sig, s)
    sig_s1 = sig_s * sig
    sigt_s1 = bg.sigma ** (s + 1.0)
    e2 = jet.e2
    g00, g0, h = jet.g00, jet.g0, jet.h
    gm = geo.gam

    A00, A0, As = delta_A(geo)
    C00, C0 = delta_C(geo)
    f_bg = (s + 2.0) / (s + 1.0) * sigt_s1      # f(∂Φ̃)
    f_val = f_of(sig, phi_t, s)
    ss1 = s / (s + 1.0)
    GGam = _e("ab...,ajb...->j...", G, gm[1:, 1:, 1:])   # g^{ab}Γ_ajb

    d00 = 2.0 * (A00 + C00 + (f_bg - f_val) - (g00 + 1.0) * f_bg - ss1 * (g00 + 1.0) * sig_s1
                 + 2.5 * (om - H) * jet.dt_g00 + 3.0 * (om * om - H * H) * (g00 + 1.0))
    d0 = 2.0 * (A0 + C0 + (s - 1.0) / (2.0 * (s + 1.0)) * sigt_s1 * g0
                - 2.0 * sig_s * phi_t * phi - ss1 * sig_s1 * g0
                + 1.5 * (om - H) * jet.dt_g0 + (om * om - H * H) * g0 - (om - H) * GGam)
    ds = 2.0 * (As / e2 + (G00 + 1.0) * sigt_s1 * h
                - 2.0 * om * _e("a...,ajk...->jk...", G0, jet.grad_h)
                - 2.0 / e2 * sig_s * _e("j...,k...->jk...", phi, phi)
                + ss1 * (sigt_s1 - sig_s1) * h + 1.5 * (om - H) * jet.dt_h)

    dgam = delta_gamma(jet, inv)
    ac = geo.ac
    D = ac.denom
    eO = np.exp(jet.Omega)
    z = np.exp(-jet.Omega) * phi / phi_t
    G0z = _e("a...,a...->...", G0, z)
    zGz = _e("ab...,a...,b...->...", G, z, z)
    cub = (dgam[0, 0, 0] * phi_t
           + _e("a...,a...->...", dgam[1:, 0, 0] + dgam[0, 1:, 0] + dgam[0, 0, 1:], phi)
           + e2 * _e("ab...,a...,b...->...", dgam[0, 1:, 1:] + dgam[1:, 0, 1:] + dgam[1:, 1:, 0], z, z) * phi_t
           + e2 * _e("abc...,a...,b...,c...->...", dgam[1:, 1:, 1:], z, z, phi))
    dphi = (-om * bg.w * ac.delta_m / D * phi_t
            - (3.0 * om * (G00 + 1.0) * phi_t + 6.0 * om * eO * G0z * phi_t
               + (3.0 - 2.0 * s) * om * e2 * zGz * phi_t + 2.0 * s * cub) / D)
    return DeltaTerms(dA00=A00, dA0=A0, dAs=As, dC00=C00, dC0=C0, d00=d00, d0=d0, ds=ds,
                      dphi=dphi, f_val=f_val, dgamma=dgam)


# ---------------------------------------------------------------------------
# Reduced wave operators
# ---------------------------------------------------------------------------

def metric_box_decomposed(geo: Geometry, dt: DeltaTerms | None = None):
    """(□̂g_00, □̂g_0j, □̂h_jk) from the damped-wave form plus Δ terms."""
    if dt is None:
        dt = delta_terms(geo)
    jet, H = geo.jet, geo.bg.H
    G = geo.inv.gus
    GGam = _e("ab...,ajb...->j...", G, geo.gam[1:, 1:, 1:])
    box00 = 5.0 * H * jet.dt_g00 + 6.0 * H * H * (jet.g00 + 1.0) + dt.d00
    box0 = 3.0 * H * jet.dt_g0 + 2.0 * H * H * jet.g0 - 2.0 * H * GGam + dt.d0
    boxh = 3.0 * H * jet.dt_h + dt.ds
    return box00, box0, boxh


def A_tensor(geo: Geometry) -> np.ndarray:
    """A_{μν} = g^{αβ}g^{κλ}[(∂_α g_{νκ})(∂_β g_{μλ}) − Γ_{ανκ}Γ_{βμλ}]."""
    gi, dg, gm = geo.ginv, geo.dg, geo.gam
    return (_e("ab...,kl...,ank...,bml...->mn...", gi, gi, dg, dg)
            - _e("ab...,kl...,ank...,bml...->mn...", gi, gi, gm, gm))


def metric_box_direct(geo: Geometry):
    """(□̂g_00, □̂g_0j, □̂h_jk) from A_{μν}, the gauge terms and the fluid source."""
    jet, bg = geo.jet, geo.bg
    g, ginv = geo.g, geo.ginv
    om, omd, lam, s = jet.omega, bg.omega_dot, bg.lam, bg.s
    A = A_tensor(geo)
    up, down = contracted_christoffel(ginv, geo.gam, g)
    I = np.zeros_like(A)
    I[0, 0] = 2.0 * om * (up[0] - 3.0 * om)
    I[0, 1:] = 2.0 * om * (3.0 * om * g[0, 1:] - down[1:])
    I[1:, 0] = I[0, 1:]
    ld = geo.ld
    dphi = np.concatenate([np.asarray(ld.phi_t)[None], ld.phi])
    sig = geo.sigma
    sig_s = sigma_power(sig, s)
    box = (3.0 * om * geo.dg[0] + 2.0 * A + 2.0 * I - 2.0 * lam * g
           - 4.0 * sig_s * _e("m...,n...->mn...", dphi, dphi)
           - 2.0 * s / (s + 1.0) * sig_s * sig * g)
    box[0, :] = box[0, :] + 3.0 * g[0, :] * omd
    box[:, 0] = box[:, 0] + 3.0 * g[0, :] * omd
    e2 = jet.e2
    G00, G0 = geo.inv.gu00, geo.inv.gu0
    boxh = (box[1:, 1:] / e2 - G00 * (4.0 * om * jet.dt_h + (4.0 * om * om + 2.0 * omd) * jet.h)
            - 4.0 * om * _e("a...,ajk...->jk...", G0, jet.grad_h))
    return box[0, 0], box[0, 1:], boxh


def isolate_dtt(geo: Geometry, box00, box0, boxh, check: bool = True):
    """∂_t² v = (g^{00})^{-1}(□̂v − g^{ab}∂_a∂_b v − 2g^{0a}∂_a∂_t v)."""
    G00, G0, G = geo.inv.gu00, geo.inv.gu0, geo.inv.gus
    if check:
        bad = ~(np.abs(G00) >= GU00_MIN)
        if np.any(bad):
            raise DegenerateMetricError(1, "|g^00| fell below the isolation threshold",
                                        int(np.count_nonzero(bad)))
    ld = geo.ld
    tt00 = (box00 - _e("ab...,ab...->...", G, ld.dd_g00) - 2.0 * _e("a...,a...->...", G0, ld.grad_dt_g00)) / G00
    tt0 = (box0 - _e("ab...,abj...->j...", G, ld.dd_g0) - 2.0 * _e("a...,aj...->j...", G0, ld.grad_dt_g0)) / G00
    tth = (boxh - _e("ab...,abjk...->jk...", G, ld.dd_h) - 2.0 * _e("a...,ajk...->jk...", G0, ld.grad_dt_h)) / G00
    return tt00, tt0, tth


def metric_rhs_decomposed(ld: LocalData, bg: BackgroundPoint, check: bool = True, geo: Geometry | None = None,
                          deltas: DeltaTerms | None = None):
    geo = geo or build_geometry(ld, bg, check)
    return isolate_dtt(geo, *metric_box_decomposed(geo, deltas), check=check)


def metric_rhs_direct(ld: LocalData, bg: BackgroundPoint, check: bool = True, geo: Geometry | None = None):
    geo = geo or build_geometry(ld, bg, check)
    return isolate_dtt(geo, *metric_box_direct(geo), check=check)


def fluid_rhs(ld: LocalData, bg: BackgroundPoint, check: bool = True, geo: Geometry | None = None,
              deltas: DeltaTerms | None = None):
    """∂_t²Φ = m^{ab}∂_aΦ_b + 2m^{0a}∂_aΦ_t − wω∂_tΦ − Δ_∂Φ."""
    geo = geo or build_geometry(ld, bg, check)
    if deltas is None:
        deltas = delta_terms(geo)
    ac = geo.ac
    if check:
        check_acoustical_definite(ac.ms)
    return (_e("ab...,ab...->...", ac.ms, ld.grad_phi) + 2.0 * _e("a...,a...->...", ac.m0, ld.grad_phi_t)
            - bg.w * ld.jet.omega * ld.phi_t - deltas.dphi)


def fluid_rhs_direct(ld: LocalData, bg: BackgroundPoint, check: bool = True, geo: Geometry | None = None):
    """∂_t²Φ from [σg^{αβ} − 2s∂^αΦ∂^βΦ]∂_α∂_βΦ − 3ωσ∂_tΦ + 2sΓ^{αλβ}∂_αΦ∂_λΦ∂_βΦ = 0."""
    geo = geo or build_geometry(ld, bg, check)
    s, om = bg.s, ld.jet.omega
    sig, up = raised_gradient(geo.ginv, ld.phi_t, ld.phi)
    C = sig * geo.ginv - 2.0 * s * _e("m...,n...->mn...", up, up)
    gup = raised_christoffel_direct(geo.ginv, geo.gam)
    dphi = np.concatenate([np.asarray(ld.phi_t)[None], ld.phi])
    rest = (_e("ab...,ab...->...", C[1:, 1:], ld.grad_phi) + 2.0 * _e("a...,a...->...", C[0, 1:], ld.grad_phi_t)
            - 3.0 * om * sig * ld.phi_t + 2.0 * s * _e("alb...,a...,l...,b...->...", gup, dphi, dphi, dphi))
    return -rest / C[0, 0]


def full_rhs_decomposed(ld: LocalData, bg: BackgroundPoint, check: bool = True):
    """(∂_t²g_00, ∂_t²g_0j, ∂_t²h_jk, ∂_t²Φ) along the production path."""
    geo = build_geometry(ld, bg, check)
    dt = delta_terms(geo)
    tt00, tt0, tth = metric_rhs_decomposed(ld, bg, check, geo=geo, deltas=dt)
    ttphi = fluid_rhs(ld, bg, check, geo=geo, deltas=dt)
    return tt00, tt0, tth, ttphi


def full_rhs_direct(ld: LocalData, bg: BackgroundPoint, check: bool = True):
    geo = build_geometry(ld, bg, check)
    tt00, tt0, tth = metric_rhs_direct(ld, bg, check, geo=geo)
    return tt00, tt0, tth, fluid_rhs_direct(ld, bg, check, geo=geo)


# ---------------------------------------------------------------------------
# Grid interface
# ---------------------------------------------------------------------------

_HESS_FIELDS = [G00, 2, 3, 4] + list(range(8, 14))   # g00, g0j, h unique


def local_data_from_array(y: np.ndarray, grid: PeriodicGrid, bg: BackgroundPoint) -> LocalData:
    """Spectral derivatives of every stored field, batched into one transform."""
    yh = grid.fft(y)
    grad = grid.ifft(np.stack([k * yh for k in grid.ik]))      # (3, 24, n, n, n)
    ik = grid.ik
    hsub = yh[_HESS_FIELDS]
    hess_u = grid.ifft(np.stack([ik[a] * (ik[b] * hsub) for a, b in PAIRS]))   # (6, 10, ...)
    hess = hess_u[FULL]                                                           # (3, 3, 10, ...)
    jet = MetricJet(
        g00=y[G00], g0=y[G0], h=y[H][FULL], dt_g00=y[DG00], dt_g0=y[DG0], dt_h=y[DH][FULL],
        grad_g00=grad[:, G00], grad_g0=grad[:, G0], grad_h=grad[:, H][:, FULL],
        Omega=bg.Omega, omega=bg.omega)
    return LocalData(
        jet=jet,
        dd_g00=hess[:, :, 0], dd_g0=hess[:, :, 1:4],
        dd_h=hess[:, :, 4:10][:, :, FULL],
        grad_dt_g00=grad[:, DG00], grad_dt_g0=grad[:, DG0], grad_dt_h=grad[:, DH][:, FULL],
        phi_t=y[PHI_T], phi=y[PHI], grad_phi_t=grad[:, PHI_T], grad_phi=grad[:, PHI])


def homogeneous_local_data(y0: np.ndarray, bg: BackgroundPoint) -> LocalData:
    """LocalData for a spatially constant state, as a single point (trailing axis of length 1)."""
    v = np.asarray(y0, dtype=float).reshape(NFIELDS, 1)
    z = lambda *sh: np.zeros(sh + (1,))
    jet = MetricJet(
        g00=v[G00], g0=v[G0], h=v[H][FULL], dt_g00=v[DG00], dt_g0=v[DG0], dt_h=v[DH][FULL],
        grad_g00=z(3), grad_g0=z(3, 3), grad_h=z(3, 3, 3), Omega=bg.Omega, omega=bg.omega)
    return LocalData(
        jet=jet, dd_g00=z(3, 3), dd_g0=z(3, 3, 3), dd_h=z(3, 3, 3, 3),
        grad_dt_g00=z(3), grad_dt_g0=z(3, 3), grad_dt_h=z(3, 3, 3),
        phi_t=v[PHI_T], phi=v[PHI], grad_phi_t=z(3), grad_phi=z(3, 3))


def is_homogeneous(y: np.ndarray) -> bool:
    """True when every field is exactly constant over the grid."""
    return bool(np.all(y == y[:, :1, :1, :1]))


def evolution_rhs(y: np.ndarray, t: float, grid: PeriodicGrid, dc: DerivedConstants,
                  dealias: bool = False, check: bool = True, homogeneous_shortcut: bool = True) -> np.ndarray:
    """Time derivative of the packed state array.

    A spatially constant state has vanishing spectral derivatives, so with
    ``homogeneous_shortcut`` it is evaluated at one point and broadcast.
    """
    bg = background_at(dc, t)
    if homogeneous_shortcut and is_homogeneous(y):
        ld = homogeneous_local_data(y[:, 0, 0, 0], bg)
        tt00, tt0, tth, ttphi = full_rhs_decomposed(ld, bg, check)
        tt00, tt0, tth, ttphi = (np.reshape(a, a.shape[:-1] + (1, 1, 1)) for a in (tt00, tt0, tth, ttphi))
        out = np.empty_like(y)
        out[G00] = y[DG00]
        out[DG00] = tt00
        out[G0] = y[DG0]
        out[DG0] = tt0
        out[H] = y[DH]
        out[DH] = sym_unique(0.5 * (tth + np.swapaxes(tth, 0, 1)))
        out[PHI_T] = ttphi
        out[PHI] = 0.0
        if check and not np.all(np.isfinite(out)):
            raise DegenerateMetricError(4, "non-finite right-hand side")
        return out
    ld = local_data_from_array(y, grid, bg)
    tt00, tt0, tth, ttphi = full_rhs_decomposed(ld, bg, check)
    out = np.empty_like(y)
    out[G00] = y[DG00]
    out[DG00] = tt00
    out[G0] = y[DG0]
    out[DG0] = tt0
    out[H] = y[DH]
    out[DH] = sym_unique(0.5 * (tth + np.swapaxes(tth, 0, 1)))
    out[PHI_T] = ttphi
    out[PHI] = ld.grad_phi_t
    if dealias:
        out = grid.dealias(out)
    if check and not np.all(np.isfinite(out)):
        raise DegenerateMetricError(4, "non-finite right-hand side")
    return out


__all__ = [
    "LocalData", "Geometry", "DeltaTerms", "build_geometry", "delta_A", "delta_C", "delta_terms",
    "metric_box_decomposed", "metric_box_direct", "A_tensor", "isolate_dtt", "metric_rhs_decomposed",
    "metric_rhs_direct", "fluid_rhs", "fluid_rhs_direct", "full_rhs_decomposed", "full_rhs_direct",
    "local_data_from_array", "homogeneous_local_data", "is_homogeneous", "evolution_rhs", "f_of", "principal_raised_christoffel", "NFIELDS",
]

import math

import numpy as np
import pytest
from scipy.integrate import quad

from eesim.background import background_at, log_scale_factor
from eesim.diagnostics import (
    GeodesicError, SpacetimeInterpolator, asymptotic_extract, constraint_residuals, decay_rate_fit, energies,
    fit_rate, gauss_codazzi_fields, geodesic_integrate, norms, random_timelike_geodesics, ricci_scalar,
    second_fundamental_form, z_ratio_bound,
)
from eesim.evolution import EvolutionConfig, evolve, step
from eesim.grid import PeriodicGrid
from eesim.initial_data import PerturbationSpec, background_state, homogeneous_constrained_data, perturb_all
from eesim.state import EvolutionState, G00

ALL = [PerturbationSpec(1.0, "g00", (1, 0, 0)), PerturbationSpec(1.0, "g0j", (0, 1, 0), index=(1,)),
       PerturbationSpec(1.0, "hjk", (0, 0, 1), index=(1, 2)), PerturbationSpec(1.0, "phi_t", (1, 1, 0)),
       PerturbationSpec(1.0, "phi_j", (1, 0, 0), profile="sine", index=(1,))]


def _scaled(eps):
    return [PerturbationSpec(eps * s.amplitude, s.target, s.mode, s.profile, s.index) for s in ALL]


# --- norms -------------------------------------------------------------------

def test_norms_vanish_on_background(dc, grid16):
    for t in (0.0, 2.0):
        rec = norms(background_state(dc, grid16, t), dc, 3)
        assert rec.S_total <= 1e-13


def test_constant_g00_norm(dc, grid16):
    c = 1e-3
    st = perturb_all(background_state(dc, grid16), [PerturbationSpec(c, "g00", (0, 0, 0))])
    rec = norms(st, dc, 3)
    assert rec.S_g00 == pytest.approx(c * (2 * math.pi) ** 1.5, rel=1e-12)
    assert rec.S_total == pytest.approx(rec.S_g00, rel=1e-12)


def test_norms_homogeneous_degree_one(dc, grid16):
    base = background_state(dc, grid16)
    a = norms(perturb_all(base, _scaled(1e-4)), dc, 3)
    b = norms(perturb_all(base, _scaled(3e-4)), dc, 3)
    for key in ("S_g00", "S_g0", "S_h", "S_fluid", "S_total"):
        assert getattr(b, key) == pytest.approx(3 * getattr(a, key), rel=1e-9)


def test_running_suprema(dc, grid16):
    base = background_state(dc, grid16)
    big = norms(perturb_all(base, _scaled(1e-3)), dc, 3)
    small = norms(perturb_all(base, _scaled(1e-4)), dc, 3, previous=big)
    assert small.sup_total == pytest.approx(big.S_total)
    assert small.S_total < big.S_total


# --- energies ----------------------------------------------------------------

def test_energies_vanish_on_background(dc, grid16):
    rec = energies(background_state(dc, grid16, 1.0), dc, 3)
    assert rec.E_total <= 1e-13
    assert abs(rec.discarded_fluid_term) <= 1e-20


def test_energy_single_mode_oracle(dc, grid16):
    eps = 1e-3
    st = perturb_all(background_state(dc, grid16), [PerturbationSpec(eps, "g00", (1, 0, 0))])
    rec = energies(st, dc, 0)
    # ½∫ε² sin²(x¹) over T³ = ε²·π·(2π)²·½ = 2π³ε², at Ω(0) = 0.
    assert rec.E_g00 ** 2 == pytest.approx(2 * math.pi ** 3 * eps ** 2, rel=1e-12)
    assert rec.E_g0 == 0.0 and rec.E_fluid == 0.0


def test_gamma_delta_validation(dc, grid8):
    with pytest.raises(ValueError):
        energies(background_state(dc, grid8), dc, 1, gamma_delta={"h": (1.0, 1.0)})


def test_norm_energy_ratio_bounded(dc):
    g = PeriodicGrid(12)
    st = perturb_all(background_state(dc, g), _scaled(1e-4))
    recs = []
    traj = evolve(st, EvolutionConfig(dt=0.1, t_end=2.0, output_stride=5), dc,
                  hooks=[lambda s: {"n": norms(s, dc, 3), "e": energies(s, dc, 3)}])
    assert traj.completed
    for r in traj.records:
        n, e = r["n"], r["e"]
        for nb, eb in ((n.S_g00, e.E_g00), (n.S_g0, e.E_g0), (n.S_h, e.E_h), (n.S_fluid, e.E_fluid)):
            recs.append(nb / eb)
    assert 0.1 <= min(recs) and max(recs) <= 10.0


def test_discarded_term_non_positive_subcritical(dc, grid16):
    st = perturb_all(background_state(dc, grid16), _scaled(1e-3))
    assert energies(st, dc, 3).discarded_fluid_term < 0


# --- slice geometry ----------------------------------------------------------

def test_flat_ricci_scalar_zero(grid16):
    assert np.abs(ricci_scalar(np.broadcast_to(np.eye(3)[:, :, None, None, None], (3, 3) + grid16.shape).copy(),
                               grid16)).max() <= 1e-14


def test_conformally_flat_ricci_scalar():
    g = PeriodicGrid(24)
    X = g.coords
    u = 0.1 * np.sin(X[0]) * np.cos(X[1]) + 0.05 * np.cos(X[2])
    du = g.gradient(u)
    lap = sum(g.deriv(du[a], a + 1) for a in range(3))
    expected = -np.exp(-2 * u) * (4 * lap + 2 * (du ** 2).sum(0))
    got = ricci_scalar(np.exp(2 * u) * np.eye(3)[:, :, None, None, None], g)
    assert np.abs(got - expected).max() <= 1e-12


def test_background_second_fundamental_form(dc, grid8):
    t = 0.9
    bg = background_at(dc, t)
    K = second_fundamental_form(background_state(dc, grid8, t), dc)
    assert np.allclose(K, bg.omega * bg.e2 * np.eye(3)[:, :, None, None, None], rtol=1e-14, atol=1e-14)


def test_second_fundamental_form_matches_lie_derivative_of_evolved_metric(dc, grid8):
    specs = [PerturbationSpec(2e-2, "g00", (1, 0, 0)), PerturbationSpec(2e-2, "g0j", (0, 1, 0), index=(2,)),
             PerturbationSpec(2e-2, "hjk", (0, 0, 1), index=(1, 3)), PerturbationSpec(2e-2, "g0j", (1, 0, 1), index=(3,))]
    st = perturb_all(background_state(dc, grid8, 0.5), specs)
    gs = lambda s: background_at(dc, s.t).e2 * s.h

    def central(fn, d):
        return (fn(step(st, d, dc)) - fn(step(st, -d, dc))) / (2 * d)

    def richardson(fn, d=1e-3):
        return (4 * central(fn, d / 2) - central(fn, d)) / 3

    dt_gs = richardson(gs)
    dt_g0 = richardson(lambda s: s.g0)
    dt_g00 = richardson(lambda s: s.g00)
    from eesim.tensors import MetricPoint, invert_metric
    g = MetricPoint(st.g00, st.g0, gs(st))
    inv = invert_metric(g)
    lapse_inv = 1.0 / np.sqrt(-inv.gu00)
    Nhat = -lapse_inv * inv.full()[0]                       # future unit normal, (4, ...)
    full = g.full()
    grad_full = grid8.gradient(full)                        # (a, μ, ν, ...)
    dgs = np.concatenate([dt_gs[None], grad_full[:, 1:, 1:]])          # ∂_μ g_jk
    dN = grid8.gradient(Nhat)                               # (j, μ, ...)
    lie = (np.einsum("m...,mjk...->jk...", Nhat, dgs)
           + np.einsum("mk...,jm...->jk...", full[:, 1:], dN)
           + np.einsum("jm...,km...->jk...", full[1:, :], dN))
    K = second_fundamental_form(st, dc)
    assert np.abs(K - 0.5 * lie).max() <= 1e-8
    assert np.abs(dt_g0 - st.dt_g0).max() <= 1e-8 and np.abs(dt_g00 - st.dt_g00).max() <= 1e-8


def test_constraints_vanish_on_background(dc, grid8):
    rec = constraint_residuals(background_state(dc, grid8, 0.3), dc)
    assert max(rec.Q_up_Linf, rec.Q_down_Linf, rec.gauss_Linf, rec.codazzi_Linf, rec.curl_L2) <= 1e-12


def test_constraints_homogeneous_anisotropic(dc, grid8):
    st = homogeneous_constrained_data(dc, None, grid8, K_anisotropy=(0.1, -0.05, -0.05), psi_ring=1.1 * dc.psi_bar)
    rec = constraint_residuals(st, dc)
    assert rec.gauss_Linf <= 1e-12 and rec.codazzi_Linf <= 1e-12 and rec.Q_down_Linf <= 1e-12


def test_tilted_slice_of_background_satisfies_constraints(dc):
    # The background written on the slices t = τ + εf(x): exact data with
    # nonzero momentum density, which fixes the sign of the Codazzi source.
    g = PeriodicGrid(24)
    X = g.coords
    eps, tau = 0.05, 1.0
    f = np.sin(X[0]) + 0.5 * np.cos(X[1] + X[2])
    df = g.gradient(f)
    T = tau + eps * f
    pts = [background_at(dc, float(v)) for v in T.ravel()]
    Om = np.array([p.Omega for p in pts]).reshape(T.shape)
    om = np.array([p.omega for p in pts]).reshape(T.shape)
    pt = np.array([p.phi_t for p in pts]).reshape(T.shape)
    bg = background_at(dc, tau)
    I3 = np.eye(3)[:, :, None, None, None]
    gs = np.exp(2 * Om) * I3 - eps ** 2 * df[:, None] * df[None, :]
    dgs = 2 * np.exp(2 * Om) * om * I3
    h = gs / bg.e2
    dth = dgs / bg.e2 - 2 * bg.omega * h
    st = EvolutionState.from_fields(g, tau, -1.0, 0.0, -eps * df, 0.0, h, dth, pt, eps * pt * df)
    gauss, codazzi = gauss_codazzi_fields(st, dc)
    assert np.abs(gauss).max() <= 1e-12
    assert np.abs(codazzi).max() <= 1e-12


def test_z_ratio(dc, grid8):
    assert z_ratio_bound(background_state(dc, grid8), dc) == 0.0
    st = perturb_all(background_state(dc, grid8), [PerturbationSpec(1e-3, "phi_j", (1, 0, 0), index=(1,))])
    assert z_ratio_bound(st, dc) == pytest.approx(1e-3 / dc.psi_bar, rel=1e-12)


# --- rate fits -----------------------------------------------------------------

def test_rate_fit_exact_exponential():
    ts = np.linspace(0, 10, 41)
    rate, r2 = decay_rate_fit(list(zip(ts, 2.0 * np.exp(-0.3 * ts))))
    assert rate == pytest.approx(0.3, abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_rate_fit_noisy_exponential():
    rng = np.random.default_rng(0)
    ts = np.linspace(0, 10, 200)
    vals = np.exp(-0.5 * ts) * np.exp(0.01 * rng.standard_normal(ts.size))
    f = fit_rate(list(zip(ts, vals)))
    assert abs(f.rate - 0.5) <= 0.01 and f.r2 >= 0.99
    assert f.ci_low <= 0.5 <= f.ci_high


def test_rate_fit_constant_series():
    rate, r2 = decay_rate_fit([(t, 3.0) for t in range(10)])
    assert abs(rate) <= 1e-12 and r2 == 1.0


def test_rate_fit_window_and_errors():
    s = [(t, math.exp(-t)) for t in np.linspace(0, 10, 21)]
    assert decay_rate_fit(s, (2.0, 8.0))[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        decay_rate_fit(s[:5])
    with pytest.raises(ValueError):
        decay_rate_fit([(t, v - 0.5) for t, v in s])


# --- asymptotics ---------------------------------------------------------------

def _background_trajectory(dc, grid, times):
    return [(t, background_state(dc, grid, t).y) for t in times]


def test_asymptotics_of_background(dc, grid8):
    snaps = _background_trajectory(dc, grid8, np.linspace(0, 20, 21))
    rec = asymptotic_extract(snaps, dc, grid8, N=3 if grid8.n >= 9 else 2)
    assert np.allclose(rec.g_inf, np.eye(3)[:, :, None, None, None], atol=1e-15)
    assert rec.g_inf_positive_definite
    assert np.allclose(rec.psi_inf, dc.psi_bar, rtol=1e-8)
    assert np.abs(rec.dphi_inf).max() == 0.0


def test_asymptotics_rates_on_synthetic_decay(dc, grid8):
    rate = 0.8
    times = np.linspace(0.0, 25.0, 51)
    snaps = []
    for t in times:
        y = background_state(dc, grid8, t).y.copy()
        y[8] += 1e-3 * math.exp(-rate * t) * np.cos(grid8.coords[0])
        snaps.append((t, y))
    rec = asymptotic_extract(snaps, dc, grid8, N=2)
    assert rec.rates["h_minus_ginf"].rate == pytest.approx(rate, rel=1e-3)
    assert rec.cauchy_monotone_last3


def test_asymptotics_flags_growth(dc, grid8):
    times = np.linspace(0.0, 25.0, 51)
    snaps = []
    for t in times:
        y = background_state(dc, grid8, t).y.copy()
        y[21] += 1e-3 * (1 + math.sin(0.6 * t)) * np.cos(grid8.coords[0])
        snaps.append((t, y))
    rec = asymptotic_extract(snaps, dc, grid8, N=2)
    assert "dphi_minus_dphiinf" in rec.fit_failures


def test_asymptotics_too_few_snapshots(dc, grid8):
    with pytest.raises(ValueError):
        asymptotic_extract(_background_trajectory(dc, grid8, [0, 1, 2]), dc, grid8)


def test_short_trajectory_flagged(dc, grid8):
    rec = asymptotic_extract(_background_trajectory(dc, grid8, np.linspace(0, 5, 11)), dc, grid8, N=2)
    assert "trajectory" in rec.fit_failures


# --- geodesics -------------------------------------------------------------------

@pytest.fixture(scope="module")
def bg_interp(dc):
    g = PeriodicGrid(8)
    return SpacetimeInterpolator(_background_trajectory(dc, g, np.arange(0.0, 6.01, 0.25)), dc, g)


def test_comoving_observer(dc, bg_interp):
    res = geodesic_integrate(None, [0.0, 0.1, -0.2, 0.3], [1.0, 0, 0, 0], 5.0, dc, ds=0.05, interpolator=bg_interp)
    assert np.abs(res.u[:, 0, 0] - 1.0).max() <= 1e-10
    assert np.abs(res.x[:, 0, 1:] - [0.1, -0.2, 0.3]).max() <= 1e-14
    assert res.x[-1, 0, 0] == pytest.approx(5.0, abs=1e-10)


def test_timelike_geodesics_on_background(dc, bg_interp):
    rng = np.random.default_rng(5)
    x, u = random_timelike_geodesics(rng, 6, bg_interp, max_speed=0.5)
    res = geodesic_integrate(None, x, u, 4.0, dc, ds=0.05, interpolator=bg_interp)
    assert np.all(res.min_u0 > 0)
    assert np.all(res.max_u0 <= res.u0_initial * (1 + 1e-12))
    assert res.norm_drift.max() <= 1e-6


def test_null_ray_coordinate_distance(dc, bg_interp):
    res = geodesic_integrate(None, [0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], 20.0, dc, ds=0.02,
                             interpolator=bg_interp)
    t_end = res.x[-1, 0, 0]
    assert 1.0 < t_end < 6.0
    exact, _ = quad(lambda t: math.exp(-log_scale_factor(dc, t)), 0.0, t_end, epsabs=1e-14, epsrel=1e-13)
    assert res.x[-1, 0, 1] == pytest.approx(exact, abs=1e-6)
    # Past t = 20/H the remaining coordinate distance is a negligible share of the total.
    total, _ = quad(lambda t: math.exp(-log_scale_factor(dc, t)), 0.0, 60.0, limit=200)
    tail, _ = quad(lambda t: math.exp(-log_scale_factor(dc, t)), 20.0 / dc.H, 60.0, limit=200)
    assert tail / total <= 1e-3


def test_geodesic_input_errors(dc, bg_interp):
    with pytest.raises(GeodesicError):
        geodesic_integrate(None, [0.0, 0, 0, 0], [0.1, 1.0, 0, 0], 1.0, dc, interpolator=bg_interp)
    with pytest.raises(GeodesicError):
        geodesic_integrate(None, [0.0, 0, 0, 0], [-1.0, 0, 0, 0], 1.0, dc, interpolator=bg_interp)
    with pytest.raises(GeodesicError):
        geodesic_integrate(None, [0.0, 0, 0, 0], [1.0, 0, 0, 0], 10.0, dc, ds=0.1, interpolator=bg_interp)

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from eesim.audit import identity_audit, random_local_data
from eesim.background import background_at, hubble, log_scale_factor
from eesim.grid import PeriodicGrid
from eesim.evolution import EvolutionConfig, evolve
from eesim.initial_data import PerturbationSpec, background_state, homogeneous_constrained_data, perturb_all
from eesim.rhs import (
    build_geometry, delta_terms, evolution_rhs, fluid_rhs, fluid_rhs_direct, full_rhs_decomposed, full_rhs_direct,
    homogeneous_local_data, is_homogeneous,
)
from eesim.state import DG0, DG00, DH, G00, H, PHI, PHI_T


def test_background_rhs(dc, grid8):
    for t in (0.0, 0.8, 5.0):
        st = background_state(dc, grid8, t)
        out = evolution_rhs(st.y, t, grid8, dc)
        bg = background_at(dc, t)
        assert np.abs(out[DG00]).max() <= 1e-13
        assert np.abs(out[DG0]).max() <= 1e-13
        assert np.abs(out[DH]).max() <= 1e-13
        assert np.abs(out[PHI]).max() == 0.0
        assert np.allclose(out[PHI_T], -dc.w * bg.omega * bg.phi_t, rtol=1e-13, atol=0)


def test_deltas_vanish_on_background(dc):
    bg = background_at(dc, 1.0)
    st = background_state(dc, PeriodicGrid(4), 1.0)
    ld = homogeneous_local_data(st.y[:, 0, 0, 0], bg)
    d = delta_terms(build_geometry(ld, bg))
    for name in ("dA00", "dA0", "dAs", "dC00", "dC0", "d00", "d0", "ds", "dphi"):
        assert np.abs(getattr(d, name)).max() <= 1e-14, name


def test_random_points_two_paths_agree(dc):
    rep = identity_audit(dc, seed=7, trials=1500)
    assert rep.worst() <= 1e-9, rep.max_rel


def test_fluid_paths_agree_at_late_time(dc):
    rng = np.random.default_rng(3)
    bg = background_at(dc, 6.0)
    ld = random_local_data(rng, 300, bg, dc.q)
    a = fluid_rhs(ld, bg)
    b = fluid_rhs_direct(ld, bg)
    assert np.abs(a - b).max() <= 1e-9 * np.abs(b).max()


def test_constant_g00_perturbation_paths_agree(dc):
    bg = background_at(dc, 0.0)
    y = background_state(dc, PeriodicGrid(4)).y[:, 0, 0, 0].copy()
    y[G00] = -1.01
    ld = homogeneous_local_data(y, bg)
    for a, b in zip(full_rhs_decomposed(ld, bg), full_rhs_direct(ld, bg)):
        assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(b).max())


def test_homogeneous_shortcut_matches_grid_path(dc, grid8):
    st = homogeneous_constrained_data(dc, None, grid8, K_anisotropy=(0.02, -0.01, -0.01))
    assert is_homogeneous(st.y)
    a = evolution_rhs(st.y, 0.0, grid8, dc)
    b = evolution_rhs(st.y, 0.0, grid8, dc, homogeneous_shortcut=False)
    assert np.abs(a - b).max() <= 1e-13


def test_inhomogeneous_rhs_is_finite_and_symmetric(dc, grid8):
    st = perturb_all(background_state(dc, grid8), [PerturbationSpec(1e-3, "hjk", (1, 1, 0), index=(1, 2)),
                                                  PerturbationSpec(1e-3, "phi_j", (0, 1, 0), index=(3,))])
    out = evolution_rhs(st.y, 0.0, grid8, dc)
    assert np.all(np.isfinite(out))
    assert not is_homogeneous(st.y)


def _bianchi_reduced(dc, aniso, t_end, ts):
    """Diagonal Bianchi I with lapse N in the wave gauge Γ^0 = 3ω, written in proper-time rates.

    y = (N, α_1..3, H_1..3, ψ): a_j = e^{α_j}, H_j = (da_j/dτ)/a_j, ψ = dΦ/dτ.
    """
    s, lam = dc.s, dc.lam

    def rhs(t, y):
        N, al, Hs, psi = y[0], y[1:4], y[4:7], y[7]
        om = hubble(dc, t)
        theta = Hs.sum()
        sig = psi * psi
        rho_minus_p = 2 * s / (s + 1) * sig ** (s + 1)
        dN = N * N * (theta - 3 * om * N)
        dal = N * Hs
        dH = N * (0.5 * rho_minus_p + lam - theta * Hs)
        dpsi = -N * theta * psi / (2 * s + 1)
        return np.concatenate([[dN], dal, dH, [dpsi]])

    st0 = homogeneous_constrained_data(dc, None, PeriodicGrid(4),
                                       K_anisotropy=aniso)
    h0 = st0.h[:, :, 0, 0, 0]
    dth0 = st0.dt_h[:, :, 0, 0, 0]
    om0 = hubble(dc, 0.0)
    H0 = np.diag(dth0) / (2 * np.diag(h0)) + om0
    y0 = np.concatenate([[1.0], 0.5 * np.log(np.diag(h0)), H0, [st0.phi_t[0, 0, 0]]])
    sol = solve_ivp(rhs, (0.0, t_end), y0, method="DOP853", rtol=1e-12, atol=1e-14, t_eval=ts)
    return sol


def test_bianchi_one_matches_reduced_ode(dc, grid8):
    aniso = (0.05, -0.03, -0.02)
    st = homogeneous_constrained_data(dc, None, grid8, K_anisotropy=aniso)
    cfg = EvolutionConfig(dt=0.01, t_end=3.0, snapshot_stride=50)
    traj = evolve(st, cfg, dc)
    assert traj.completed
    ts = np.array([t for t, _ in traj.snapshots])
    sol = _bianchi_reduced(dc, aniso, 3.0, ts)
    for k, (t, y) in enumerate(traj.snapshots):
        N, al, Hs, psi = sol.y[0, k], sol.y[1:4, k], sol.y[4:7, k], sol.y[7, k]
        Om = log_scale_factor(dc, t)
        assert y[G00, 0, 0, 0] == pytest.approx(-N * N, abs=1e-8)
        hd = y[H, 0, 0, 0][[0, 3, 5]]
        assert np.allclose(hd, np.exp(2 * al - 2 * Om), rtol=0, atol=1e-8)
        assert np.abs(y[H, 0, 0, 0][[1, 2, 4]]).max() <= 1e-14
        assert y[PHI_T, 0, 0, 0] == pytest.approx(N * psi, abs=1e-8)
        dth = y[DH, 0, 0, 0][[0, 3, 5]]
        assert np.allclose(dth, (2 * N * Hs - 2 * hubble(dc, t)) * np.exp(2 * al - 2 * Om), rtol=0, atol=1e-8)
    # The anisotropy must actually have been exercised.
    assert np.ptp(sol.y[1:4, -1]) > 1e-3

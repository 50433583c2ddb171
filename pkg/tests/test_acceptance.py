"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION k PASS|FAIL`` line with the measured
numbers and appends them to ``acceptance_report.json`` in the project root.
The long runs (a few minutes each on one core) are shared through
module-scoped fixtures.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from eesim.audit import identity_audit
from eesim.background import CosmologyParams, derive_constants, scale_factor
from eesim.cli import ALL_BLOCKS, ExperimentConfig, geodesic_report, preset, run
from eesim.diagnostics import asymptotic_extract, constraint_residuals
from eesim.evolution import EvolutionConfig, evolve
from eesim.grid import PeriodicGrid
from eesim.initial_data import PerturbationSpec, background_state, homogeneous_constrained_data, perturb_all

pytestmark = pytest.mark.acceptance

REPORT = Path(__file__).resolve().parents[1] / "acceptance_report.json"
EPS = 1e-3
_results: dict = {}


@pytest.fixture(scope="module", autouse=True)
def _report():
    yield
    REPORT.write_text(json.dumps(_results, indent=2, sort_keys=True, default=float))


def _record(k: int, ok: bool, **metrics):
    _results[f"criterion_{k}"] = {"pass": bool(ok), **metrics}
    line = ", ".join(f"{key}={val}" for key, val in metrics.items())
    print(f"\nCRITERION {k} {'PASS' if ok else 'FAIL'}: {line}")
    return ok


@pytest.fixture(scope="module")
def dc():
    return derive_constants(CosmologyParams(lam=3.0, sound_speed_sq=0.2, rho_bar=1.0, a_ring=1.0))


@pytest.fixture(scope="module")
def subcritical(tmp_path_factory):
    """The ε = 1e-3 all-block run shared by criteria 4-7."""
    return run(preset("stability-subcritical"), tmp_path_factory.mktemp("subcritical"))


# -----------------------------------------------------------------------------

def test_criterion_1_decomposition_identity(dc):
    start = time.perf_counter()
    rep = identity_audit(dc, seed=0, trials=10_000)
    secs = time.perf_counter() - start
    worst = rep.worst()
    ok = worst <= 1e-9 and secs <= 60.0
    _record(1, ok, trials=rep.trials, max_relative_deviation=worst, per_block=rep.max_rel, seconds=round(secs, 2))
    assert ok


def test_criterion_2_background_exactness(dc, tmp_path):
    # (a) closed form against the Friedmann ODE.
    t_end = 30.0 / dc.H

    def rhs(t, y):
        return [y[0] * math.sqrt(dc.H ** 2 + dc.kappa_ring / (3.0 * y[0] ** dc.P))]

    sol = solve_ivp(rhs, (0.0, t_end), [dc.a_ring], method="DOP853", rtol=1e-13, atol=0.0, dense_output=True)
    ts = np.linspace(0.0, t_end, 301)
    a, _, _ = scale_factor(dc, ts)
    ode_rel = float(np.max(np.abs(a / sol.sol(ts)[0] - 1.0)))
    # (b) evolution of exact background data, every field checked every 0.1.
    cfg = preset("background-exactness")
    cfg.evolution["snapshot_stride"] = 100
    res = run(cfg, tmp_path / "bg")
    drift = res.manifest["summary"]["max_background_drift"]
    ok = ode_rel <= 1e-10 and res.trajectory.completed and drift <= 1e-8
    _record(2, ok, closed_form_vs_ode=ode_rel, max_field_drift=drift, snapshots=len(res.trajectory.snapshots),
            t_final=res.trajectory.termination.t)
    assert ok


def test_criterion_3_gauge_preservation(dc):
    grid = PeriodicGrid(8)          # data are spatially constant; the grid size does not matter
    st = homogeneous_constrained_data(dc, None, grid, K_anisotropy=(1e-3, -1e-3, 0.0))
    hook = lambda s: {"c": constraint_residuals(s, dc)}
    traj = evolve(st, EvolutionConfig(dt=1e-3, t_end=10.0 / dc.H, output_stride=250), dc, hooks=[hook])
    q = max(r["c"].Q_down_L2 for r in traj.records)
    q_up = max(r["c"].Q_up_L2 for r in traj.records)
    curl = max(r["c"].curl_L2 for r in traj.records)
    ok = traj.completed and q <= 1e-8 and curl <= 1e-10
    _record(3, ok, max_Q_down_L2=q, max_Q_up_L2=q_up, max_curl_L2=curl, outputs=len(traj.records))
    assert ok


def _single_block(target, tmp):
    base = next(dict(p) for p in ALL_BLOCKS if p["target"] == target)
    cfg = ExperimentConfig(preset=f"block-{target}", grid_n=16, cosmology=CosmologyParams(sound_speed_sq=0.2),
                           evolution={"dt": 0.1, "t_end": 15.0}, perturbations=[base], perturbation_norm=EPS,
                           diagnostics=preset("stability-subcritical").diagnostics)
    return run(cfg, tmp)


def test_criterion_4_subcritical_stability(dc, subcritical, tmp_path):
    rows = {}
    ok = True
    runs = {t: _single_block(t, tmp_path / t) for t in ("g00", "g0j", "hjk", "phi_t", "phi_j")}
    runs["all_blocks_t25"] = subcritical
    for name, res in runs.items():
        s = res.manifest["summary"]
        z0, zmax = s["z_ratio_initial"], s["z_ratio_max"]
        # z starts at zero unless Φ_j is perturbed; the reference is then the
        # z-size of an ε fluid perturbation (see the decisions ledger).
        zref = max(z0, EPS / dc.psi_bar)
        row = {"completed": res.trajectory.completed, "S_total_0": s["initial_S_total"], "max_S_total": s["max_S_total"],
               "max_discarded_term": s["max_discarded_fluid_term"], "z_initial": z0, "z_max": zmax,
               "z_reference": zref}
        row_ok = (res.trajectory.completed and s["max_S_total"] <= 2 * EPS and s["max_discarded_fluid_term"] <= 0.0
                  and zmax <= 10 * zref)
        row["pass"] = row_ok
        rows[name] = row
        ok = ok and row_ok
    _record(4, ok, runs=rows)
    assert ok


def test_criterion_5_asymptotics(dc, subcritical):
    asym = asymptotic_extract(subcritical.trajectory, dc, N=3)
    qH = dc.q * dc.H
    r = asym.rates
    got = {k: (v.rate if k in r else None) for k, v in r.items()}
    ok = (not asym.fit_failures
          and r["h_minus_ginf"].rate >= 0.9 * qH
          and 1.5 * dc.H <= r["dt_h"].rate <= 2.5 * dc.H
          and r["psi_minus_psiinf"].rate >= 0.9 * qH
          and asym.cauchy_monotone_last3
          and asym.g_inf_positive_definite)
    _record(5, ok, qH=qH, rates=got, r2={k: v.r2 for k, v in r.items()}, fit_failures=asym.fit_failures,
            cauchy_decrements=asym.cauchy_decrements, t_final=asym.t_final)
    assert ok


def test_criterion_6_sound_speed_threshold(dc, subcritical, tmp_path):
    sup = run(preset("supercritical"), tmp_path / "super")
    qH_sub = dc.q * dc.H
    sup_rate = sup.manifest["summary"]["fluid_norm_rate"]["rate"]
    sub_rate = subcritical.manifest["summary"]["fluid_norm_rate"]["rate"]
    fails_to_decay = sup_rate <= 0.1 * qH_sub or sup_rate < 0.0
    sub_bounded = subcritical.manifest["summary"]["max_S_total"] <= 2 * EPS
    contrast = {"subcritical_fluid_growth": subcritical.manifest["flags"]["fluid_growth"],
                "supercritical_fluid_growth": sup.manifest["flags"]["fluid_growth"],
                "supercritical_non_decay_flag": sup.manifest["flags"]["fluid_non_decay"]}
    ok = (sup.trajectory.completed and fails_to_decay and sub_bounded
          and contrast["supercritical_non_decay_flag"] and not contrast["subcritical_fluid_growth"])
    _record(6, ok, supercritical_fluid_rate=sup_rate, subcritical_fluid_rate=sub_rate, threshold=0.1 * qH_sub,
            supercritical_max_S_total=sup.manifest["summary"]["max_S_total"], **contrast)
    assert ok


def test_criterion_7_geodesics(dc, subcritical):
    rep = geodesic_report(subcritical.trajectory, dc, count=20, seed=0)
    tail = rep["max_tail_fraction"]
    ok = (rep["min_u0"] > 0 and rep["max_u0_over_initial"] <= 1.1 and rep["max_norm_drift"] <= 1e-6
          and tail is not None and tail <= 1e-3)
    _record(7, ok, **rep)
    assert ok


def test_criterion_8_numerical_hygiene(dc, tmp_path):
    # (a) RK4 self-convergence on a perturbed run.
    grid = PeriodicGrid(8)
    specs = [PerturbationSpec.from_dict({**p, "amplitude": 1e-2}) for p in ALL_BLOCKS]
    st = perturb_all(background_state(dc, grid), specs)
    finals = [evolve(st, EvolutionConfig(dt=dt, t_end=2.0, output_stride=1000), dc).final_state.y
              for dt in (0.2, 0.1, 0.05)]
    order = math.log2(np.abs(finals[0] - finals[1]).max() / np.abs(finals[1] - finals[2]).max())
    # (b) band-limited spectral derivative.
    g16 = PeriodicGrid(16)
    x, y, z = g16.coords
    f = np.sin(2 * x + y) * np.cos(3 * z) + np.cos(5 * y)
    exact = 2 * np.cos(2 * x + y) * np.cos(3 * z)
    deriv_err = float(np.abs(g16.deriv(f, 1) - exact).max())
    # (c) bit-for-bit determinism of full runs.
    d = {"grid_n": 10, "evolution": {"dt": 0.1, "t_end": 1.0}, "perturbations": [dict(p) for p in ALL_BLOCKS],
         "perturbation_norm": EPS, "diagnostics": {"N": 3, "output_stride": 1}, "seed": 11}
    a = run(ExperimentConfig.from_dict(d), tmp_path / "a")
    b = run(ExperimentConfig.from_dict(d), tmp_path / "b")
    names = ("norms.csv", "energies.csv", "constraints.csv", "asymptotics_series.csv", "final_state.bin")
    identical = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    ok = 3.8 <= order <= 4.2 and deriv_err <= 1e-12 and identical
    _record(8, ok, convergence_order=order, spectral_derivative_error=deriv_err, bitwise_identical=identical,
            manifest_hash_equal=a.manifest["content_hash"] == b.manifest["content_hash"])
    assert ok

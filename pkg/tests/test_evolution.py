import math

import numpy as np
import pytest

from eesim.background import background_at
from eesim.diagnostics import constraint_residuals, curl_residual
from eesim.evolution import (
    ConfigError, EvolutionConfig, GuardThresholds, background_vector, check_cfl, check_guards, evolve,
    load_checkpoint, max_wave_speed, save_checkpoint, step,
)
from eesim.grid import PeriodicGrid
from eesim.initial_data import PerturbationSpec, background_state, perturb_all
from eesim.state import PHI_T
from eesim.tensors import DegenerateMetricError

SPECS = [PerturbationSpec(1e-3, "g00", (1, 0, 0)), PerturbationSpec(1e-3, "g0j", (0, 1, 0), index=(1,)),
         PerturbationSpec(1e-3, "hjk", (0, 0, 1), index=(1, 2)), PerturbationSpec(1e-3, "phi_t", (1, 1, 0)),
         PerturbationSpec(1e-3, "phi_j", (1, 0, 0), profile="sine", index=(1,))]


def _background_error(dc, grid, dt, subtraction):
    st = background_state(dc, grid)
    out = step(st, dt, dc, background_subtraction=subtraction)
    return np.abs(out.y - background_state(dc, grid, dt).y).max()


def test_one_step_on_background_local_order(dc, grid8):
    e1 = _background_error(dc, grid8, 0.2, False)
    e2 = _background_error(dc, grid8, 0.1, False)
    assert e1 > 0
    assert 4.5 <= math.log2(e1 / e2) <= 5.5


def test_background_subtraction_is_exact_on_background(dc, grid8):
    assert _background_error(dc, grid8, 0.2, True) <= 1e-15


def test_background_vector(dc):
    y, dy = background_vector(dc, 1.0)
    bg = background_at(dc, 1.0)
    assert y[PHI_T, 0, 0, 0] == bg.phi_t
    assert dy[PHI_T, 0, 0, 0] == pytest.approx(-dc.w * bg.omega * bg.phi_t)


def test_time_reversal(dc, grid8):
    st = perturb_all(background_state(dc, grid8, 0.5), SPECS)
    dt = 1e-4
    cur = st
    for _ in range(5):
        cur = step(cur, dt, dc)
    for _ in range(5):
        cur = step(cur, -dt, dc)
    assert cur.t == pytest.approx(st.t, abs=1e-15)
    assert np.abs(cur.y - st.y).max() <= 1e-12


def test_irrotationality_preserved(dc):
    g = PeriodicGrid(12)
    st = perturb_all(background_state(dc, g), SPECS)
    traj = evolve(st, EvolutionConfig(dt=0.1, t_end=1.0, output_stride=5), dc,
                  hooks=[lambda s: {"curl": curl_residual(s)}])
    assert traj.completed
    assert max(r["curl"] for r in traj.records) <= 1e-10


def test_gauge_residual_stays_small(dc):
    g = PeriodicGrid(12)
    st = background_state(dc, g)
    traj = evolve(st, EvolutionConfig(dt=0.1, t_end=1.0, output_stride=5), dc,
                  hooks=[lambda s: {"Q": constraint_residuals(s, dc).Q_down_L2}])
    assert max(r["Q"] for r in traj.records) <= 1e-12


def test_trajectory_records(dc, grid8):
    st = perturb_all(background_state(dc, grid8), SPECS)
    traj = evolve(st, EvolutionConfig(dt=0.1, t_end=1.0, output_stride=3, snapshot_stride=2), dc,
                  hooks=[lambda s: {"m": float(s.g00.mean())}])
    assert traj.completed and traj.termination.steps == 10
    assert traj.times == sorted(traj.times) and len(set(traj.times)) == len(traj.times)
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(1.0, abs=1e-14)
    assert [round(t, 12) for t, _ in traj.snapshots] == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert len(traj.series("m")) == len(traj.records)


def test_determinism(dc, grid8):
    st = perturb_all(background_state(dc, grid8), SPECS)
    cfg = EvolutionConfig(dt=0.1, t_end=0.5)
    a = evolve(st, cfg, dc).final_state.y
    b = evolve(st, cfg, dc).final_state.y
    assert a.tobytes() == b.tobytes()


def test_nan_gives_class4(dc, grid8):
    st = background_state(dc, grid8)
    st.y[0, 1, 2, 3] = np.nan
    traj = evolve(st, EvolutionConfig(dt=0.1, t_end=1.0), dc, check_cfl_at_start=False)
    assert traj.termination.status == "guard" and traj.termination.breakdown_class == 4
    assert traj.termination.steps == 0


def test_large_lapse_perturbation_gives_class1(dc, grid8):
    st = perturb_all(background_state(dc, grid8), [PerturbationSpec(0.6, "g00", (1, 0, 0))])
    traj = evolve(st, EvolutionConfig(dt=0.1, t_end=1.0), dc)
    assert traj.termination.breakdown_class == 1
    assert "g_00" in traj.termination.message


def test_spatial_metric_guard_class2(dc, grid8):
    st = perturb_all(background_state(dc, grid8), [PerturbationSpec(0.95, "hjk", (1, 0, 0), index=(1, 1))])
    with pytest.raises(DegenerateMetricError) as exc:
        check_guards(st, dc, GuardThresholds())
    assert exc.value.breakdown_class == 2


def test_fluid_guard_class3(dc, grid8):
    st = background_state(dc, grid8)
    st.y[21] = 2.0          # ∂_1Φ large enough to make ∇Φ spacelike
    with pytest.raises(DegenerateMetricError) as exc:
        check_guards(st, dc, GuardThresholds())
    assert exc.value.breakdown_class == 3


def test_cfl(dc, grid16):
    st = background_state(dc, grid16)
    assert max_wave_speed(st, dc) == pytest.approx(1.0, rel=1e-12)
    assert check_cfl(st, dc, 0.1) < 0.5
    with pytest.raises(ConfigError):
        check_cfl(st, dc, 0.3)
    with pytest.raises(ConfigError):
        evolve(st, EvolutionConfig(dt=0.3, t_end=1.0), dc)


@pytest.mark.parametrize("kw", [dict(dt=0.0, t_end=1.0), dict(dt=float("nan"), t_end=1.0), dict(dt=0.1, t_end=-1.0),
                                dict(dt=0.1, t_end=1.0, output_stride=0),
                                dict(dt=0.1, t_end=1.0, guard_thresholds={"g00_max": 0.1})])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        EvolutionConfig(**kw)


def test_config_digest_stable():
    a = EvolutionConfig(dt=0.1, t_end=2.0)
    b = EvolutionConfig(dt=0.1, t_end=2.0)
    assert a.digest() == b.digest() != EvolutionConfig(dt=0.1, t_end=3.0).digest()


def test_checkpoint_round_trip(dc, grid8, tmp_path):
    st = perturb_all(background_state(dc, grid8, 0.25), SPECS)
    cfg = EvolutionConfig(dt=0.1, t_end=1.0)
    save_checkpoint(tmp_path / "ck.bin", st, cfg, dc)
    back, side = load_checkpoint(tmp_path / "ck.bin")
    assert back.t == st.t and np.array_equal(back.y, st.y)
    assert side["config_hash"] == cfg.digest()
    a = evolve(st, cfg, dc).final_state.y
    b = evolve(back, cfg, dc).final_state.y
    assert a.tobytes() == b.tobytes()

import math
import time

import numpy as np
import pytest

from rhheat.errors import LabError
from rhheat.flow import FlowParams, closed_form, dirichlet_energy, export_trajectory, flow_rhs, run_flow
from rhheat.geometry import CouplingSchedule, ManifoldConfig, curvature, integrate

from conftest import coupled_config


def test_rhs_sphere_and_torus(sphere_cfg, torus_cfg):
    assert flow_rhs(sphere_cfg.initial_state())[0] == -4.0
    np.testing.assert_allclose(flow_rhs(torus_cfg.initial_state()), [2.0, 0.0, 0.0])


def test_rhs_coupled_linear_map_matches_torus_rate():
    cfg = ManifoldConfig("COUPLED_CIRCLE", grid=32, metric0=(1.0,) * 32, winding=1)
    rhs = flow_rhs(cfg.initial_state())
    np.testing.assert_allclose(rhs[:32], 2.0, rtol=1e-14)
    np.testing.assert_allclose(rhs[32:], 0.0, atol=1e-12)


@pytest.mark.parametrize("t, r2", [(0.0, 1.0), (0.1, 0.6), (0.2, 0.2)])
def test_closed_form_sphere(sphere_cfg, t, r2):
    assert closed_form(sphere_cfg, t).metric[0] == pytest.approx(r2, rel=1e-14)


def test_sphere_run_matches_closed_form(sphere_traj, sphere_cfg):
    for st in sphere_traj.checkpoints():
        ref = closed_form(sphere_cfg, st.time).metric[0]
        assert abs(st.metric[0] - ref) <= 1e-10 * ref
    assert sphere_traj.state_at(0.2).metric[0] == pytest.approx(0.2, abs=1e-10)


@pytest.mark.parametrize("sched", [
    CouplingSchedule("CONSTANT", 1.0),
    CouplingSchedule("LINEAR_FLOOR", 1.0, 3.0, 0.6),
    CouplingSchedule("EXPONENTIAL", 1.0, 2.0, 0.3),
])
@pytest.mark.parametrize("integrator", ["RK4", "RK45_ADAPTIVE"])
def test_torus_run_matches_closed_form(sched, integrator):
    cfg = ManifoldConfig("TORUS_LINEAR", grid=16, winding=1, coupling=sched)
    traj = run_flow(cfg, FlowParams(0.2, 0.01, integrator=integrator))
    for st in traj.checkpoints():
        ref = 1.0 + 2.0 * sched.integral(0.0, st.time)
        assert abs(st.metric[0] - ref) <= 1e-9 * ref
    # dense output between checkpoints
    ref = 1.0 + 2.0 * sched.integral(0.0, 0.137)
    assert traj.state_at(0.137).metric[0] == pytest.approx(ref, rel=1e-8)


def test_interpolation_reproduces_checkpoints(coupled_traj):
    for i in (0, 5, len(coupled_traj.times) - 1):
        t = coupled_traj.times[i]
        np.testing.assert_array_equal(coupled_traj.state_at(t).metric, coupled_traj.values[i][:128])


def test_past_degeneracy_refused(sphere_cfg):
    with pytest.raises(LabError) as err:
        run_flow(sphere_cfg, FlowParams(0.25, 0.01))
    assert err.value.code == "PAST_DEGENERACY"


@pytest.mark.parametrize("kw", [dict(t_end=0.0), dict(t_end=0.1, dt=0.5), dict(t_end=0.1, integrator="EULER")])
def test_bad_params(torus_cfg, kw):
    with pytest.raises(LabError) as err:
        FlowParams(**kw).validate(torus_cfg)
    assert err.value.is_config_error


def test_coupled_energy_decreases(coupled_traj):
    energies = [dirichlet_energy(st) for st in coupled_traj.checkpoints()[::20]]
    times = coupled_traj.times[::20]
    for (e0, t0), (e1, t1) in zip(zip(energies, times), zip(energies[1:], times[1:])):
        assert e1 - e0 <= 1e-6 * (t1 - t0)


def test_S_lower_bound_along_flows(sphere_traj, torus_traj, coupled_traj):
    for traj in (torus_traj, coupled_traj):
        m0 = 1.0 / curvature(traj.initial_state()).S.min()
        for st in traj.checkpoints():
            assert curvature(st).S.min() >= 1.0 / (m0 - 2.0 / 3.0 * st.time) - 1e-6
    for st in sphere_traj.checkpoints():
        assert curvature(st).S.min() > 0


def test_measure_evolution(coupled_traj, sphere_traj):
    # d/dt int f dmu = -int f S dmu for a fixed field f
    for traj in (coupled_traj, sphere_traj):
        st = traj.state_at(0.1)
        n = st.profile_weights.size
        f = 1.0 + 0.3 * np.cos(np.linspace(0, 2 * np.pi, n, endpoint=False))
        h = 1e-4
        d = (integrate(traj.state_at(0.1 + h), f) - integrate(traj.state_at(0.1 - h), f)) / (2 * h)
        rhs = -integrate(st, f * curvature(st).S)
        assert d == pytest.approx(rhs, rel=1e-5, abs=1e-8)


def test_degenerate_metric_guard():
    # a strongly coupled run drives nothing to zero; a frozen sphere never degenerates
    cfg = ManifoldConfig("ROUND_SPHERE", grid=16, frozen=True)
    traj = run_flow(cfg, FlowParams(1.0, 0.1))
    assert traj.state_at(1.0).metric[0] == 1.0


def test_export_columns(tmp_path, torus_traj, sphere_traj):
    rows = export_trajectory(torus_traj, tmp_path / "t.csv")
    assert list(rows[0]) == ["time", "A", "B", "C", "min_S", "max_S", "volume"]
    rows = export_trajectory(sphere_traj, tmp_path / "s.csv")
    assert list(rows[0]) == ["time", "r2", "min_S", "max_S", "volume"]


def test_flow_runtime():
    t0 = time.perf_counter()
    run_flow(ManifoldConfig("ROUND_SPHERE", grid=512), FlowParams(0.2, 0.001))
    run_flow(ManifoldConfig("TORUS_LINEAR", grid=256, winding=1), FlowParams(0.2, 0.001))
    assert time.perf_counter() - t0 < 1.0

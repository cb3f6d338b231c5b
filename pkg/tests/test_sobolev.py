import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rhheat.errors import LabError
from rhheat.flow import FlowParams, run_flow
from rhheat.geometry import ManifoldConfig, curvature, integrate
from rhheat import sobolev as sb

from conftest import coupled_config


@pytest.mark.parametrize("n", [3, 4])
def test_talenti_matches_bubble_oracle(n):
    q, _ = sb.bubble_oracle(n)
    assert abs(q / sb.talenti_constant(n) - 1) <= 5e-3


def test_talenti_reference_value():
    # sqrt(4/3) * (2 pi^2)^(-1/3)
    assert sb.talenti_constant(3) == pytest.approx(math.sqrt(4 / 3) * (2 * math.pi ** 2) ** (-1 / 3), rel=1e-15)


def test_oracle_decreasing_in_n():
    vals = [sb.bubble_oracle(n)[0] for n in range(3, 9)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("n", [1, 2, 2.5])
def test_talenti_bad_dimension(n):
    with pytest.raises(LabError) as err:
        sb.talenti_constant(n)
    assert err.value.code == "BAD_DIMENSION"


def test_lambda0_unit_sphere(sphere_cfg):
    assert sb.lambda0_alpha(sphere_cfg.initial_state()) == pytest.approx(6.0, abs=1e-6)


def test_lambda0_torus_reference(torus_cfg):
    assert sb.lambda0_alpha(torus_cfg.initial_state()) == pytest.approx(-1.0, abs=1e-6)


@pytest.mark.parametrize("c", [-2.0, 0.5, 3.0])
def test_lambda0_shift(c):
    st_ = coupled_config(64).initial_state()
    assert sb.lambda0_alpha(st_, shift=c) == pytest.approx(sb.lambda0_alpha(st_) + c, abs=1e-10)


def test_lambda0_rayleigh_consistency_and_lower_bound():
    st_ = coupled_config(128).initial_state()
    lam, v = sb.lambda0_alpha(st_, return_vector=True)
    assert sb.rayleigh_quotient(st_, v) == pytest.approx(lam, abs=1e-10)
    assert lam >= curvature(st_).S.min() - 1e-12


@pytest.mark.parametrize("cfg", [
    ManifoldConfig("ROUND_SPHERE", grid=128),
    ManifoldConfig("TORUS_LINEAR", grid=32, winding=1),
    ManifoldConfig("TORUS_LINEAR", grid=32, winding=2, metric0=(3.0, 1.0, 1.0)),
])
def test_positive_case_iff_lambda0_positive(cfg):
    st_ = cfg.initial_state()
    assert (curvature(st_).S.min() > 0) == (sb.lambda0_alpha(st_) > 0)


def test_probe_suite_shape(sphere_cfg, torus_cfg):
    for cfg in (sphere_cfg, torus_cfg):
        probes = sb.make_probes(cfg)
        assert len(probes) == 64
        assert sum(lab.startswith("bump") for lab in probes.labels) == 16
        assert sum(lab.startswith("random") for lab in probes.labels) == 40


def test_constant_probe_threshold(sphere_cfg):
    st_ = sphere_cfg.initial_state()
    probes = sb.make_probes(sphere_cfg).subset([0])
    V = 2 * math.pi ** 2
    B_star = V ** (1 / 3) / V
    assert sb.probe_inequality(st_, 0.0, B_star * (1 + 1e-9), probes) >= 0
    assert sb.probe_inequality(st_, 0.0, B_star * (1 - 1e-6), probes) < 0


def test_huge_constants_pass(sphere_cfg, torus_cfg):
    for cfg in (sphere_cfg, torus_cfg):
        assert sb.probe_inequality(cfg.initial_state(), 1e6, 1e6, sb.make_probes(cfg)) >= 0


def test_sphere_sharp_constant_passes(sphere_cfg):
    K = sb.talenti_constant(3)
    assert sb.probe_inequality(sphere_cfg.initial_state(), K * K, 0.0, sb.make_probes(sphere_cfg)) >= 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 1), st.floats(0, 1))
def test_probe_monotone_positive_S(A, B, dA, dB):
    cfg = ManifoldConfig("ROUND_SPHERE", grid=64)
    st_ = cfg.initial_state()
    probes = sb.make_probes(cfg)
    base = sb.probe_inequality(st_, A, B, probes)
    assert sb.probe_inequality(st_, A + dA, B, probes) >= base - 1e-12
    assert sb.probe_inequality(st_, A, B + dB, probes) >= base - 1e-12


def test_empty_probe_set(sphere_cfg):
    with pytest.raises(LabError) as err:
        sb.probe_inequality(sphere_cfg.initial_state(), 1.0, 1.0, sb.ProbeSuite([], []))
    assert err.value.code == "EMPTY_PROBE_SET"


def test_estimate_positive_case(sphere_traj):
    c = sb.estimate_AB(sphere_traj, [0.0, 0.1, 0.2])
    assert c.positive_case
    assert np.all(c.B_curve == 0.0)
    assert np.all(c.A_curve == c.A_curve[0]) and c.A_curve[0] == pytest.approx(sb.talenti_constant(3) ** 2)
    lin = sb.estimate_AB(sphere_traj, [0.0], a_convention="linear")
    assert lin.A_curve[0] == pytest.approx(sb.talenti_constant(3))


def test_estimate_static_torus_time_independent():
    cfg = ManifoldConfig("TORUS_LINEAR", grid=64, winding=1, frozen=True)
    traj = run_flow(cfg, FlowParams(0.2, 0.05))
    c = sb.estimate_AB(traj, [0.0, 0.1, 0.2])
    assert np.ptp(c.B_curve) <= 1e-4 * c.B_curve.max()


def test_refined_probe_set_never_decreases_B(torus_traj):
    st_ = torus_traj.state_at(0.1)
    A = sb.talenti_constant(3) ** 2
    full = sb.make_probes(torus_traj.cfg)
    B_sub = sb.minimal_B(st_, A, full.subset(range(0, 64, 2)))
    B_full = sb.minimal_B(st_, A, full)
    assert B_full >= B_sub * (1 - 1e-4)
    assert sb.probe_inequality(st_, A, B_full, full) >= 0


def test_estimate_deterministic(torus_traj):
    a = sb.estimate_AB(torus_traj, [0.0, 0.2])
    b = sb.estimate_AB(torus_traj, [0.0, 0.2])
    np.testing.assert_array_equal(a.B_curve, b.B_curve)


def test_override_and_export(tmp_path, torus_cfg):
    c = sb.constants_from_override(torus_cfg, [(0.2, 0.5, 0.1), (0.0, 0.4, 0.2)])
    np.testing.assert_array_equal(c.times, [0.0, 0.2])
    assert c.A(0.1) == pytest.approx(0.45) and c.B(0.1) == pytest.approx(0.15)
    with pytest.raises(LabError):
        sb.constants_from_override(torus_cfg, [(0.0, -1.0, 0.0)])
    sb.export_constants(c, tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["t", "A", "B", "lambda0", "positive_case"]
    assert len(rows) == 3

import math
import time

import numpy as np
import pytest

from rhheat import heatkernel as hk
from rhheat.bounds import ComparisonInputs, chi
from rhheat.errors import LabError
from rhheat.flow import FlowParams, run_flow
from rhheat.geometry import ManifoldConfig
from rhheat.sobolev import SobolevConstants

WINDOWS = [(0.0, 0.01), (0.0, 0.05), (0.05, 0.15), (0.0, 0.2)]


@pytest.mark.parametrize("s, t", WINDOWS)
def test_sphere_forward_and_conjugate_vs_oracle(sphere_traj, s, t):
    t0 = time.perf_counter()
    fwd = hk.forward_solve(sphere_traj, 0, s, t)
    assert time.perf_counter() - t0 < 30
    assert hk.relative_linf_error(fwd, hk.sphere_oracle(sphere_traj, 0, s, t)) <= 1e-3
    conj = hk.conjugate_solve(sphere_traj, 0, t, s)
    assert hk.relative_linf_error(conj, hk.sphere_oracle(sphere_traj, 0, s, t, "conjugate")) <= 1e-3
    assert conj.integral() == pytest.approx(1.0, abs=1e-6)
    assert fwd.integral() <= 1.0 + 1e-6


@pytest.mark.parametrize("s, t", WINDOWS)
def test_torus_forward_and_conjugate_vs_oracle(torus_traj, s, t):
    y = (0, 3, 250)
    fwd = hk.forward_solve(torus_traj, y, s, t)
    assert hk.relative_linf_error(fwd, hk.theta_oracle(torus_traj, y, s, t)) <= 1e-3
    conj = hk.conjugate_solve(torus_traj, y, t, s)
    assert hk.relative_linf_error(conj, hk.theta_oracle(torus_traj, y, s, t, "conjugate")) <= 1e-3
    assert conj.integral() == pytest.approx(1.0, abs=1e-6)


def test_torus_J_bound(torus_traj):
    consts = SobolevConstants(0.4, np.array([0.0, 0.2]), np.ones(2), np.zeros(2), np.zeros(2), False)
    inputs = ComparisonInputs.from_trajectory(torus_traj, consts)
    for s, t in WINDOWS:
        J = hk.forward_solve(torus_traj, (0, 0, 0), s, t).integral()
        assert J <= chi(inputs, t, s) ** 1.5 + 1e-6
        # exact mass for this metric: sqrt(A(t)/A(s))
        assert J == pytest.approx(math.sqrt((1 + 2 * t) / (1 + 2 * s)), rel=1e-9)


def test_sphere_oracle_truncation_sensitivity(sphere_traj):
    a = hk.sphere_oracle(sphere_traj, 0, 0.0, 0.05, tail_tol=1e-14)
    b = hk.sphere_oracle(sphere_traj, 0, 0.0, 0.05, tail_tol=1e-10)
    assert hk.max_abs_diff(a, b) < 1e-9


def test_sphere_series_direct_sum():
    # direct sum over degrees with twice the terms
    T, theta = 0.1, 0.0
    val = hk.sphere_kernel_unit(T, np.array([theta]), 3)[0]
    k = np.arange(400)
    direct = np.sum((k + 1) ** 2 * np.exp(-k * (k + 2) * T)) / (2 * math.pi ** 2)
    assert val == pytest.approx(direct, rel=1e-12)


def test_sphere_oracle_mass_near_delta(sphere_traj):
    orc = hk.sphere_oracle(sphere_traj, 0, 0.0, 0.02)
    assert orc.integral() == pytest.approx(hk.forward_solve(sphere_traj, 0, 0.0, 0.02).integral(), rel=1e-6)


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0, 3.0])
def test_wrapped_gaussian_representations_agree(T):
    z = np.linspace(-math.pi, math.pi, 33)
    L = 2 * math.pi
    np.testing.assert_allclose(hk.wrapped_gaussian_images(z, T, L), hk.wrapped_gaussian_fourier(z, T, L),
                               rtol=1e-12, atol=1e-14)


def test_static_torus_matches_eigen_sum():
    cfg = ManifoldConfig("TORUS_LINEAR", grid=64, frozen=True)
    traj = run_flow(cfg, FlowParams(0.3, 0.05))
    orc = hk.theta_oracle(traj, (0, 0, 0), 0.0, 0.3)
    x = cfg.axes[0].x
    k = np.arange(-60, 61)
    brute = np.real(np.exp(1j * np.outer(x, k)) @ np.exp(-k * k * 0.3)) / (2 * math.pi)
    np.testing.assert_allclose(orc.factors[0], brute, rtol=1e-12)


def test_long_time_limit_frozen_sphere():
    cfg = ManifoldConfig("ROUND_SPHERE", grid=64, frozen=True)
    traj = run_flow(cfg, FlowParams(5.0, 0.5))
    G = hk.forward_solve(traj, 0, 0.0, 5.0, steps=400).factors[0]
    # the k=1 mode still contributes 4 exp(-15) ~ 1.2e-6 relative at T = 5
    np.testing.assert_allclose(G, 1.0 / (2 * math.pi ** 2), rtol=1e-5)


def test_symmetry_static_mode():
    cfg = ManifoldConfig("TORUS_LINEAR", grid=64, frozen=True, metric0=(1.0, 2.0, 0.5))
    traj = run_flow(cfg, FlowParams(0.2, 0.05))
    x, y = (3, 10, 60), (40, 1, 7)
    a = hk.forward_solve(traj, y, 0.0, 0.1).value(x)
    b = hk.forward_solve(traj, x, 0.0, 0.1).value(y)
    assert a == pytest.approx(b, rel=1e-8)


def test_conjugate_equals_reflected_forward_without_potential():
    # S = 0 (no winding, static): the conjugate solve is the time-reflected heat equation
    cfg = ManifoldConfig("TORUS_LINEAR", grid=64, frozen=True)
    traj = run_flow(cfg, FlowParams(0.2, 0.05))
    conj = hk.conjugate_solve(traj, (5, 5, 5), 0.15, 0.05)
    fwd = hk.forward_solve(traj, (5, 5, 5), 0.05, 0.15)
    assert hk.max_abs_diff(conj, fwd) <= 1e-10 * fwd.max_abs()


@pytest.mark.parametrize("traj_name", ["sphere_traj", "torus_traj", "coupled_traj"])
def test_positivity(request, traj_name):
    traj = request.getfixturevalue(traj_name)
    src = 0 if traj.cfg.is_sphere else (0, 0, 0)
    for s, t in [(0.0, 0.01), (0.05, 0.2)]:
        f = hk.forward_solve(traj, src, s, t)
        assert f.min_value() >= -1e-8 * f.max_abs()


def test_coupled_mass_and_semigroup(coupled_traj):
    conj = hk.conjugate_solve(coupled_traj, (3, 0, 0), 0.2, 0.0)
    assert conj.integral() == pytest.approx(1.0, abs=1e-3)
    res = hk.semigroup_check(coupled_traj, (2, 0, 0), 0.2, (0, 0, 0), 0.0, 0.1, method="pde")
    assert res <= 1e-3


def test_coupled_adjoint_identity(coupled_traj):
    x, y = (5, 1, 2), (0, 0, 0)
    for s, t in [(0.0, 0.1), (0.05, 0.2)]:
        a = hk.forward_solve(coupled_traj, y, s, t).value(x)
        b = hk.conjugate_solve(coupled_traj, x, t, s).value(y)
        assert a == pytest.approx(b, rel=1e-3)


@pytest.mark.parametrize("m", [0.03, 0.1, 0.17])
def test_semigroup_oracle(sphere_traj, torus_traj, m):
    assert hk.semigroup_check(sphere_traj, 0, 0.2, 64, 0.0, m) <= 1e-8
    assert hk.semigroup_check(torus_traj, (3, 4, 5), 0.2, (0, 250, 9), 0.0, m) <= 1e-8


def test_semigroup_pde_spectral_variants(sphere_traj, torus_traj):
    assert hk.semigroup_check(sphere_traj, 0, 0.2, 0, 0.0, 0.1, method="pde") <= 1e-3
    assert hk.semigroup_check(torus_traj, (3, 4, 5), 0.2, (0, 0, 0), 0.0, 0.1, method="pde") <= 1e-3


@pytest.mark.parametrize("variant, coarse, fine", [
    ("ROUND_SPHERE", (256, 100), (512, 200)),
    ("TORUS_LINEAR", (128, 100), (256, 200)),
])
def test_grid_halving(variant, coarse, fine):
    errs = []
    for N, steps in (coarse, fine):
        cfg = ManifoldConfig(variant, grid=N, winding=1)
        traj = run_flow(cfg, FlowParams(0.2, 0.01))
        y = 0 if cfg.is_sphere else (0, 0, 0)
        orc = hk.sphere_oracle(traj, y, 0.0, 0.05) if cfg.is_sphere else hk.theta_oracle(traj, y, 0.0, 0.05)
        errs.append(hk.relative_linf_error(hk.forward_solve(traj, y, 0.0, 0.05, steps), orc))
    assert errs[0] >= 3 * errs[1]


def test_time_order_errors(torus_traj):
    with pytest.raises(LabError) as err:
        hk.forward_solve(torus_traj, (0, 0, 0), 0.1, 0.1)
    assert err.value.code == "BAD_TIME_ORDER"
    with pytest.raises(LabError):
        hk.semigroup_check(torus_traj, (0, 0, 0), 0.2, (0, 0, 0), 0.0, 0.3)


def test_sphere_pair_needs_pole():
    with pytest.raises(LabError):
        hk.sphere_relative(3, 5)
    assert hk.sphere_relative(7, 0) == 7


def test_mass_diagnostics(torus_traj):
    md = hk.mass_diagnostics(torus_traj, (0, 0, 0), 0.1, (0, 0, 0), 0.0)
    assert md.J_tilde == pytest.approx(1.0, abs=1e-6)
    assert md.P > 0 and md.Q > 0

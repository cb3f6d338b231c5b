"""Integration of the coupled Ricci-harmonic map flow on the model geometries.

The flow dg/dt = -2 Ric + 2 alpha(t) dphi (x) dphi, dphi/dt = tension(phi)
reduces to

* sphere:          d(r^2)/dt = -2(n-1)
* TORUS_LINEAR:    dA/dt = 2 alpha(t) kappa^2, other entries and the map frozen
* COUPLED_CIRCLE:  dA/dt = 2 alpha(t) (phi')^2,  dpsi/dt = tension(phi)

Trajectories keep the right-hand side at every checkpoint and interpolate
between checkpoints with cubic Hermite splines.
"""

import csv
from dataclasses import dataclass
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .errors import LabError
from .geometry import GeometryState, Variant, curvature, integrate

DEGENERACY_FRACTION = 1e-8


@dataclass(frozen=True)
class FlowParams:
    t_end: float
    dt: float = 1e-3
    integrator: str = "RK4"
    rtol: float = 1e-10
    atol: float = 1e-12
    checkpoint_stride: int = 1
    cfl_safety: float = 0.4

    def validate(self, cfg):
        if not self.t_end > 0:
            raise LabError("BAD_CONFIG", "t_end must be positive")
        if not (0 < self.dt <= self.t_end):
            raise LabError("BAD_CONFIG", "dt must satisfy 0 < dt <= t_end")
        if self.integrator not in ("RK4", "RK45_ADAPTIVE"):
            raise LabError("BAD_CONFIG", f"unknown integrator {self.integrator!r}")
        if self.checkpoint_stride < 1:
            raise LabError("BAD_CONFIG", "checkpoint_stride must be a positive integer")
        if self.t_end >= cfg.degeneracy_time:
            raise LabError(
                "PAST_DEGENERACY",
                f"t_end={self.t_end:g} reaches the sphere degeneracy time "
                f"r0^2/(2(n-1)) = {cfg.degeneracy_time:g}",
            )


def pack(state):
    if state.psi is None:
        return np.array(state.metric, dtype=float)
    return np.concatenate([state.metric, state.psi])


def unpack(cfg, t, y):
    if cfg.variant is Variant.COUPLED_CIRCLE:
        n = cfg.grid
        return GeometryState(cfg, t, y[:n], y[n:])
    return GeometryState(cfg, t, y)


def flow_rhs(state, cfg=None):
    """Time derivative of (metric, map) degrees of freedom, packed like :func:`pack`."""
    cfg = state.cfg if cfg is None else cfg
    if cfg.frozen:
        return np.zeros_like(pack(state))
    alpha = state.alpha
    if cfg.is_sphere:
        return np.array([-2.0 * (cfg.dimension - 1)])
    if cfg.variant is Variant.TORUS_LINEAR:
        out = np.zeros(cfg.dimension)
        out[0] = 2.0 * alpha * cfg.slope ** 2
        return out
    dphi = state.map_derivative()
    dA = 2.0 * alpha * dphi ** 2
    dpsi = curvature(state, cfg).tension
    return np.concatenate([dA, dpsi])


def _rhs_vec(cfg, t, y):
    return flow_rhs(unpack(cfg, t, y), cfg)


def closed_form(cfg, t):
    """Exact state for the sphere and TORUS_LINEAR variants."""
    if cfg.variant is Variant.COUPLED_CIRCLE:
        raise LabError("UNSUPPORTED_VARIANT", "no closed form for COUPLED_CIRCLE")
    if t >= cfg.degeneracy_time:
        raise LabError("PAST_DEGENERACY", f"t={t:g} is past the degeneracy time")
    metric = cfg.initial_metric().copy()
    if not cfg.frozen:
        if cfg.is_sphere:
            metric[0] -= 2.0 * (cfg.dimension - 1) * t
        else:
            metric[0] += 2.0 * cfg.slope ** 2 * cfg.coupling.integral(0.0, t)
    return GeometryState(cfg, t, metric)


class FlowTrajectory:
    """Checkpointed solution with cubic Hermite interpolation in time."""

    def __init__(self, cfg, times, values, rates):
        self.cfg = cfg
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.rates = np.asarray(rates, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise LabError("BAD_CONFIG", "checkpoint times must be strictly increasing")
        self._spline = None
        if self.times.size > 1:
            self._spline = CubicHermiteSpline(self.times, self.values, self.rates, axis=0)
        self._cache = {}

    @property
    def t_end(self):
        return float(self.times[-1])

    def state_at(self, t):
        t = float(t)
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise LabError("BAD_TIME_ORDER", f"t={t:g} outside trajectory [0, {self.t_end:g}]")
        t = min(max(t, self.times[0]), self.times[-1])
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        i = np.searchsorted(self.times, t)
        if i < self.times.size and self.times[i] == t:
            y = self.values[i]
        else:
            y = self._spline(t)
        state = unpack(self.cfg, t, y)
        if len(self._cache) < 4096:
            self._cache[t] = state
        return state

    def checkpoints(self):
        return [self.state_at(t) for t in self.times]

    def initial_state(self):
        return self.state_at(self.times[0])


def _check_degeneracy(cfg, y, ref, t):
    nm = ref.size
    metric = y[:nm]
    if np.any(~np.isfinite(y)) or np.any(metric < DEGENERACY_FRACTION * ref):
        raise LabError("DEGENERATE_METRIC", f"metric fell below {DEGENERACY_FRACTION:g} of its initial value at t={t:g}")


def _rk4_times(cfg, params):
    """Step boundaries: uniform within pieces separated by coupling kinks."""
    dt = params.dt
    if cfg.variant is Variant.COUPLED_CIRCLE and not cfg.frozen:
        ax = cfg.axes[0]
        dt = min(dt, params.cfl_safety * ax.h ** 2 * min(cfg.metric0) / 2.0)
    edges = [0.0] + cfg.coupling.breakpoints(0.0, params.t_end) + [params.t_end]
    times, forced = [0.0], {0}
    for a, b in zip(edges[:-1], edges[1:]):
        m = max(1, math.ceil((b - a) / dt - 1e-9))
        times.extend(a + (b - a) * np.arange(1, m + 1) / m)
        forced.add(len(times) - 1)
    return np.array(times), forced


def run_flow(cfg, params):
    params.validate(cfg)
    s0 = cfg.initial_state()
    y = pack(s0)
    ref = cfg.initial_metric()
    if params.integrator == "RK45_ADAPTIVE":
        # integrate piecewise so schedule kinks are step boundaries; dt caps the step
        edges = [0.0] + cfg.coupling.breakpoints(0.0, params.t_end) + [params.t_end]
        ts, ys, forced = [0.0], [y], {0}
        for a, b in zip(edges[:-1], edges[1:]):
            sol = solve_ivp(
                lambda t, yy: _rhs_vec(cfg, t, yy), (a, b), ys[-1],
                method="RK45", rtol=params.rtol, atol=params.atol, max_step=params.dt,
            )
            if not sol.success:
                raise LabError("STEP_REJECTED_LIMIT", sol.message)
            ts.extend(sol.t[1:])
            ys.extend(sol.y.T[1:])
            forced.add(len(ts) - 1)
        keep = [i for i in range(len(ts)) if i % params.checkpoint_stride == 0 or i in forced]
        times = np.array([ts[i] for i in keep])
        values = np.array([ys[i] for i in keep])
        for t, v in zip(times, values):
            _check_degeneracy(cfg, v, ref, t)
        rates = np.array([_rhs_vec(cfg, t, v) for t, v in zip(times, values)])
        return FlowTrajectory(cfg, times, values, rates)

    grid, forced = _rk4_times(cfg, params)
    times, values, rates = [0.0], [y.copy()], [_rhs_vec(cfg, 0.0, y)]
    for i in range(1, grid.size):
        t0, t1 = grid[i - 1], grid[i]
        h = t1 - t0
        k1 = _rhs_vec(cfg, t0, y) if i > 1 else rates[0]
        k2 = _rhs_vec(cfg, t0 + h / 2, y + h / 2 * k1)
        k3 = _rhs_vec(cfg, t0 + h / 2, y + h / 2 * k2)
        k4 = _rhs_vec(cfg, t1, y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_degeneracy(cfg, y, ref, t1)
        if i % params.checkpoint_stride == 0 or i in forced:
            times.append(t1)
            values.append(y.copy())
            rates.append(_rhs_vec(cfg, t1, y))
    return FlowTrajectory(cfg, times, values, rates)


def dirichlet_energy(state):
    """Map energy: integral of |grad phi|^2 over M."""
    if state.cfg.is_sphere:
        return 0.0
    return integrate(state, curvature(state).grad_phi_sq)


def trajectory_rows(traj):
    cfg = traj.cfg
    rows = []
    for st in traj.checkpoints():
        S = curvature(st).S
        row = {"time": st.time}
        if cfg.is_sphere:
            row["r2"] = st.metric[0]
        elif cfg.variant is Variant.TORUS_LINEAR:
            for name, v in zip("ABCDEFGH", st.metric):
                row[name] = v
        else:
            row["A_min"], row["A_max"], row["A_mean"] = st.metric.min(), st.metric.max(), st.metric.mean()
        row["min_S"], row["max_S"], row["volume"] = S.min(), S.max(), st.volume
        rows.append(row)
    return rows


def export_trajectory(traj, path):
    rows = trajectory_rows(traj)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) for k, v in row.items()})
    return rows

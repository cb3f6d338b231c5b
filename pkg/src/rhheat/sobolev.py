"""Sobolev-constant ingredients for the heat-kernel bounds.

* the sharp Euclidean constant K(n, 2) of ||u||_{2n/(n-2)} <= K ||grad u||_2,
  with an independent radial-bubble optimization oracle;
* the first eigenvalue of v -> int (4|grad v|^2 + S v^2) dmu;
* probe-based estimates of the flow-time constants A(t), B(t) in
  (int |v|^p)^{2/p} <= A int (|grad v|^2 + S v^2/4) + B int v^2.

The probe estimates are lower bounds on admissible constants found from a
finite, seeded family of test functions.  They are not certified.
"""

import csv
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import integrate as sint
from scipy import linalg, optimize

from .errors import LabError
from .geometry import CircleAxis, curvature, sphere_volume

BISECTION_RTOL = 1e-4


def talenti_constant(n):
    """K(n,2) = sqrt(4/(n(n-2))) * vol(S^n)^(-1/n)."""
    if int(n) != n or n < 3:
        raise LabError("BAD_DIMENSION", f"K(n,2) needs n >= 3, got {n}")
    return math.sqrt(4.0 / (n * (n - 2))) * sphere_volume(n) ** (-1.0 / n)


def bubble_quotient(n, beta, radius=1e3):
    """||v||_p / ||grad v||_2 for v = (1+r^2)^-beta - (1+R^2)^-beta on the ball B_R."""
    p = 2.0 * n / (n - 2)
    area = 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)
    edge = (1.0 + radius * radius) ** (-beta)

    def v(r):
        return (1.0 + r * r) ** (-beta) - edge

    def dv(r):
        return -2.0 * beta * r * (1.0 + r * r) ** (-beta - 1.0)

    # substitute r = e^u to spread the quadrature over all scales
    lo, hi = -12.0, math.log(radius)
    num = sint.quad(lambda u: abs(v(math.exp(u))) ** p * math.exp(n * u), lo, hi, limit=400, epsabs=0, epsrel=1e-11)[0]
    den = sint.quad(lambda u: dv(math.exp(u)) ** 2 * math.exp(n * u), lo, hi, limit=400, epsabs=0, epsrel=1e-11)[0]
    return (area * num) ** (1.0 / p) / math.sqrt(area * den)


def bubble_oracle(n, radius=1e3):
    """Best quotient over the radial family (1+r^2)^-beta on a large ball."""
    if n < 3:
        raise LabError("BAD_DIMENSION", f"n >= 3 required, got {n}")
    lo, hi = 0.3 * (n - 2) + 0.05, 1.5 * n
    res = optimize.minimize_scalar(lambda b: -bubble_quotient(n, b, radius), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-7})
    return -res.fun, res.x


# ---------------------------------------------------------------------------
# first eigenvalue of 4|grad v|^2 + S v^2
# ---------------------------------------------------------------------------

def lambda0_alpha(state, modes=None, return_vector=False, shift=0.0):
    """Smallest eigenvalue of int(4|grad v|^2 + S v^2) relative to int v^2.

    ``shift`` replaces S by S + shift.

    Galerkin over the lowest zonal harmonics (sphere) or the lowest Fourier
    modes in x1 (tori; S and the metric depend on x1 only, so the ground
    state is constant along the flat fibers).
    """
    cfg = state.cfg
    S = curvature(state).S + shift
    w = state.profile_weights
    if cfg.is_sphere:
        grid = cfg.sphere_grid
        kmax = min(grid.n_intervals // 4, 64) if modes is None else modes
        basis = grid.modal[:, : kmax + 1]
        dbasis = grid.deriv_matrix @ basis
        grad_w = w / state.metric[0]
    else:
        ax = cfg.axes[0]
        kmax = ax.n // 4 if modes is None else modes
        k = 2.0 * np.pi * np.arange(1, kmax + 1) / ax.length
        kx = np.outer(ax.x, k)
        basis = np.hstack([np.ones((ax.n, 1)), np.cos(kx), np.sin(kx)])
        dbasis = np.hstack([np.zeros((ax.n, 1)), -k * np.sin(kx), k * np.cos(kx)])
        A = np.broadcast_to(state.axis_metric()[0], (ax.n,))
        grad_w = w / A
    mass = basis.T @ (w[:, None] * basis)
    form = 4.0 * dbasis.T @ (grad_w[:, None] * dbasis) + basis.T @ ((w * S)[:, None] * basis)
    try:
        vals, vecs = linalg.eigh(form, mass, subset_by_index=[0, 0])
    except (linalg.LinAlgError, ValueError) as exc:
        raise LabError("EIGENSOLVE_FAILED", str(exc)) from exc
    lam = float(vals[0])
    if not math.isfinite(lam):
        raise LabError("EIGENSOLVE_FAILED", "non-finite eigenvalue")
    if return_vector:
        return lam, basis @ vecs[:, 0]
    return lam


def rayleigh_quotient(state, v):
    """int(4|grad v|^2 + S v^2) / int v^2 for a profile v."""
    from .geometry import gradient_sq, integrate
    S = curvature(state).S
    return integrate(state, 4.0 * gradient_sq(state, v) + S * v * v) / integrate(state, v * v)


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

@dataclass
class ProbeSuite:
    """Seeded probe fields on the probe grid of one configuration."""

    fields: list
    labels: list
    seed: int = 42

    def __len__(self):
        return len(self.fields)

    def subset(self, idx):
        return ProbeSuite([self.fields[i] for i in idx], [self.labels[i] for i in idx], self.seed)


def probe_axes(cfg, fiber_points=16):
    """x1 axis of the configuration plus coarse axes for the flat fibers."""
    first = cfg.axes[0]
    m = min(cfg.grid, fiber_points)
    return [first] + [CircleAxis(m, L) for L in cfg.torus_lengths[1:]]


def make_probes(cfg, seed=42, n_harmonic=8, n_random=40, n_bump=16, fiber_points=16):
    rng = np.random.default_rng(seed)
    fields, labels = [], []
    n = cfg.dimension
    if cfg.is_sphere:
        grid = cfg.sphere_grid
        fields.append(np.ones_like(grid.theta))
        labels.append("constant")
        for k in range(1, n_harmonic):
            fields.append(grid.modal[:, k] + (1.0 if k % 2 else 0.0))
            labels.append(f"harmonic_{k}")
        for i in range(n_random):
            c = rng.normal(size=9) / (1.0 + np.arange(9))
            fields.append(grid.modal[:, :9] @ c)
            labels.append(f"random_{i}")
        dtheta = grid.theta[1]
        for i, eps in enumerate(np.geomspace(1.0, 3.0 * dtheta, n_bump)):
            fields.append((eps * eps + 1.0 - grid.cos) ** (-(n - 2) / 2.0))
            labels.append(f"bump_{i}")
        return ProbeSuite(fields, labels, seed)

    axes = probe_axes(cfg, fiber_points)
    coords = np.meshgrid(*[2.0 * np.pi * ax.x / ax.length for ax in axes], indexing="ij")
    harmonics = [
        np.ones_like(coords[0]),
        np.cos(coords[0]),
        np.sin(coords[0]) + 1.0,
        np.cos(coords[1]),
        np.cos(coords[-1]) + 0.5,
        np.cos(coords[0] + coords[1]),
        np.cos(coords[0]) * np.cos(coords[1]) * np.cos(coords[-1]),
        1.0 + 0.5 * np.cos(coords[0]),
    ]
    for i, h in enumerate(harmonics[:n_harmonic]):
        fields.append(h)
        labels.append(f"harmonic_{i}")
    for i in range(n_random):
        f = np.zeros_like(coords[0])
        for _ in range(6):
            kvec = rng.integers(-3, 4, size=n)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.normal() / (1.0 + np.abs(kvec).sum())
            f += amp * np.cos(sum(k * c for k, c in zip(kvec, coords)) + phase)
        f += rng.normal()
        fields.append(f)
        labels.append(f"random_{i}")
    # periodic chordal distance from the origin node
    d2 = sum((ax.length / np.pi * np.sin(np.pi * ax.x / ax.length)).reshape(
        [-1 if j == i else 1 for j in range(n)]) ** 2 for i, ax in enumerate(axes))
    hmin = max(ax.h for ax in axes)
    for i, eps in enumerate(np.geomspace(min(ax.length for ax in axes) / 4.0, 2.0 * hmin, n_bump)):
        fields.append((eps * eps + d2) ** (-(n - 2) / 2.0))
        labels.append(f"bump_{i}")
    return ProbeSuite(fields, labels, seed)


def probe_norms(state, v, fiber_points=16):
    """(int|v|^p)^{2/p}, int(|grad v|^2 + S v^2/4), int v^2 for one probe."""
    cfg = state.cfg
    n = cfg.dimension
    p = 2.0 * n / (n - 2)
    S = curvature(state).S
    if cfg.is_sphere:
        w = state.profile_weights
        grad = (cfg.sphere_grid.deriv_matrix @ v) ** 2 / state.metric[0]
        lhs = np.dot(np.abs(v) ** p, w) ** (2.0 / p)
        energy = np.dot(grad + 0.25 * S * v * v, w)
        return lhs, energy, np.dot(v * v, w)
    axes = probe_axes(cfg, fiber_points)
    metric = state.axis_metric()
    shape = lambda j: [-1 if i == j else 1 for i in range(n)]
    wt = np.ones(v.shape)
    grad = np.zeros(v.shape)
    for j, ax in enumerate(axes):
        g = np.broadcast_to(metric[j], (ax.n,)) if j == 0 else np.full(ax.n, float(metric[j]))
        wt = wt * (np.sqrt(g) * ax.h).reshape(shape(j))
        grad = grad + ax.deriv(v, axis=j) ** 2 / g.reshape(shape(j))
    Sx = S.reshape(shape(0))
    lhs = np.sum(np.abs(v) ** p * wt) ** (2.0 / p)
    energy = np.sum((grad + 0.25 * Sx * v * v) * wt)
    return lhs, energy, np.sum(v * v * wt)


def probe_table(state, probes):
    """Rows (lhs, energy, l2) per probe; the slack is linear in (A, B)."""
    if len(probes) == 0:
        raise LabError("EMPTY_PROBE_SET", "probe set is empty")
    table = np.array([probe_norms(state, v) for v in probes.fields])
    if np.any(table[:, 2] <= 0):
        raise LabError("EMPTY_PROBE_SET", "probe fields must be nonzero")
    return table


def _slacks(table, A, B):
    return A * table[:, 1] + B * table[:, 2] - table[:, 0]


def probe_slacks(state, A, B, probes):
    return _slacks(probe_table(state, probes), A, B)


def probe_inequality(state, A, B, probes):
    """Worst slack RHS - LHS over the probes (negative: (A, B) violated)."""
    return float(probe_slacks(state, A, B, probes).min())


def minimal_B(state, A, probes, rtol=BISECTION_RTOL, max_doublings=200):
    """Smallest B >= 0 with nonnegative slack on every probe, by bisection."""
    table = probe_table(state, probes)
    ok = lambda B: _slacks(table, A, B).min() >= 0
    if ok(0.0):
        return 0.0
    hi = 1.0
    for _ in range(max_doublings):
        if ok(hi):
            break
        hi *= 2.0
    else:
        raise LabError("BISECTION_FAILED", "no admissible B found")
    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# constants along the flow
# ---------------------------------------------------------------------------

@dataclass
class SobolevConstants:
    """A(t), B(t) sampled at ``times`` and linearly interpolated in between."""

    K: float
    times: np.ndarray
    A_curve: np.ndarray
    B_curve: np.ndarray
    lambda0: np.ndarray
    positive_case: bool
    a_convention: str = "squared"
    source: str = "probe-estimate"
    notes: dict = field(default_factory=dict)

    def A(self, t):
        return float(np.interp(t, self.times, self.A_curve))

    def B(self, t):
        return float(np.interp(t, self.times, self.B_curve))

    def breakpoints(self):
        return [float(u) for u in self.times[1:-1]]


def a_star(K, convention):
    if convention == "squared":
        return K * K
    if convention == "linear":
        return K
    raise LabError("BAD_CONFIG", f"unknown A convention {convention!r}")


def estimate_AB(traj, times, a_convention="squared", probes=None, seed=42):
    """Probe-based A(t), B(t) along a trajectory.

    A is fixed to K(n,2)^2 (or K(n,2) with ``a_convention='linear'``); B(t) is
    the smallest value the probe family admits at each time.  When
    S(., 0) > 0 the constants are A constant and B = 0, and the probe slack
    at B = 0 is recorded for inspection.
    """
    cfg = traj.cfg
    times = np.array(sorted(float(t) for t in times))
    if times.size == 0:
        raise LabError("BAD_CONFIG", "estimate_AB needs at least one time")
    K = talenti_constant(cfg.dimension)
    A = a_star(K, a_convention)
    probes = make_probes(cfg, seed) if probes is None else probes
    s0 = traj.initial_state()
    positive = bool(curvature(s0).S.min() > 0)
    lam = np.array([lambda0_alpha(traj.state_at(t)) for t in times])
    if positive:
        slack0 = [probe_inequality(traj.state_at(t), A, 0.0, probes) for t in times]
        return SobolevConstants(K, times, np.full(times.size, A), np.zeros(times.size), lam,
                                True, a_convention, notes={"probe_slack_at_B0": slack0})
    B = np.array([minimal_B(traj.state_at(t), A, probes) for t in times])
    return SobolevConstants(K, times, np.full(times.size, A), B, lam, False, a_convention)


def constants_from_override(cfg, triples, lambda0=None, a_convention="squared", positive_case=False):
    """User-supplied (t, A, B) triples, used verbatim."""
    rows = sorted((float(t), float(a), float(b)) for t, a, b in triples)
    if not rows:
        raise LabError("BAD_CONFIG", "override needs at least one (t, A, B) triple")
    t, a, b = (np.array(col) for col in zip(*rows))
    if np.any(a <= 0) or np.any(b < 0):
        raise LabError("BAD_CONFIG", "override A must be positive and B nonnegative")
    lam = np.full(t.size, np.nan) if lambda0 is None else np.asarray(lambda0, dtype=float)
    return SobolevConstants(talenti_constant(cfg.dimension), t, a, b, lam,
                            positive_case, a_convention, source="override")


def export_constants(consts, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "A", "B", "lambda0", "positive_case"])
        for t, a, b, lam in zip(consts.times, consts.A_curve, consts.B_curve, consts.lambda0):
            writer.writerow([repr(float(t)), repr(float(a)), repr(float(b)), repr(float(lam)),
                             str(consts.positive_case).lower()])

"""Heat kernel of the evolving Laplacian and its conjugate.

G(x,t;y,s) solves u_t = Laplacian_{g(t)} u in (x,t) with a delta at (y,s);
in (y,s) it solves the conjugate equation
Laplacian_y G + dG/ds - S G = 0, S = R - alpha |grad phi|^2.

Node conventions.  On the sphere every field is a zonal profile about its
source, so a node is a theta index and only the relative angle between two
points matters: one point of each (x, y) pair must be the pole (index 0).
On tori a node is a tuple of grid indices, one per coordinate, and kernels
factor into one periodic 1-D kernel per coordinate.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import linalg

from .errors import LabError
from .geometry import Variant, curvature, sphere_multiplicity, sphere_volume
from .quadrature import adaptive_simpson

DEFAULT_STEPS = 200
MOLLIFY_FRACTION = 1e-4
TAIL_TOL = 1e-14
MAX_TERMS = 100_000


@dataclass
class KernelField:
    """Kernel values on the discretization, stored as per-axis factors.

    ``weights`` are the measure weights of the time the field lives at:
    the evaluation time t for forward fields (functions of x) and the
    source time s for conjugate fields (functions of y).
    """

    variant: Variant
    source: object
    source_time: float
    eval_time: float
    solver: str
    direction: str
    factors: list
    weights: list
    meta: dict = field(default_factory=dict)

    @property
    def field_time(self):
        return self.eval_time if self.direction == "forward" else self.source_time

    def value(self, node):
        if self.variant is Variant.ROUND_SPHERE:
            return float(self.factors[0][_sphere_index(node)])
        return float(np.prod([f[i] for f, i in zip(self.factors, node)]))

    def full(self):
        out = self.factors[0]
        for f in self.factors[1:]:
            out = np.multiply.outer(out, f)
        return out

    def integral(self):
        return float(np.prod([f @ w for f, w in zip(self.factors, self.weights)]))

    def integral_sq(self):
        return float(np.prod([(f * f) @ w for f, w in zip(self.factors, self.weights)]))

    def max_abs(self):
        return float(np.prod([np.abs(f).max() for f in self.factors]))

    def min_value(self):
        """Smallest value over the grid (exact for the product structure)."""
        cands = [np.array([f.min(), f.max()]) for f in self.factors]
        out = cands[0]
        for c in cands[1:]:
            out = np.multiply.outer(out, c).ravel()
        return float(out.min())


def _sphere_index(node):
    if isinstance(node, (tuple, list)):
        if len(node) != 1:
            raise LabError("BAD_CONFIG", "sphere nodes are single theta indices")
        node = node[0]
    return int(node)


def sphere_relative(x, y):
    """Relative angle index of a sphere pair; one of them must be the pole."""
    x, y = _sphere_index(x), _sphere_index(y)
    if min(x, y) != 0:
        raise LabError("BAD_CONFIG", "on the sphere one point of each pair must be the pole (index 0)")
    return max(x, y)


def max_abs_diff(a, b):
    """Max |a - b| over the full grid without materializing whole 3-D fields."""
    if len(a.factors) == 1:
        return float(np.abs(a.factors[0] - b.factors[0]).max())
    rest_a = _outer(a.factors[1:])
    rest_b = _outer(b.factors[1:])
    return float(max(np.abs(fa * rest_a - fb * rest_b).max() for fa, fb in zip(a.factors[0], b.factors[0])))


def _outer(factors):
    out = factors[0]
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out


def relative_linf_error(field, reference):
    return max_abs_diff(field, reference) / reference.max_abs()


# ---------------------------------------------------------------------------
# time helpers
# ---------------------------------------------------------------------------

def _check_order(traj, s, t):
    if not (0.0 <= s < t):
        raise LabError("BAD_TIME_ORDER", f"need 0 <= s < t, got s={s:g}, t={t:g}")
    if t > traj.t_end + 1e-12:
        raise LabError("BAD_TIME_ORDER", f"t={t:g} beyond the trajectory end {traj.t_end:g}")


def _axis_metric(traj, tau, axis):
    st = traj.state_at(tau)
    if st.cfg.is_sphere:
        return st.metric[0]
    return st.axis_metric()[axis]


def effective_time(traj, a, b, axis=0):
    """Integral of 1/g(tau) over [a, b] for a spatially constant metric factor.

    On the sphere g is r^2 relative to the unit sphere.
    """
    if b <= a:
        return 0.0
    cfg = traj.cfg
    if cfg.frozen or (not cfg.is_sphere and axis > 0):
        return (b - a) / float(np.asarray(_axis_metric(traj, a, axis)))
    knots = [float(u) for u in traj.times if a < u < b]
    return adaptive_simpson(lambda u: 1.0 / _axis_metric(traj, u, axis), a, b,
                            tol=1e-15 * max(1.0, b - a), breakpoints=knots)


def potential_integral(traj, a, b):
    """Integral of S over [a, b] where S is constant in space (sphere, TORUS_LINEAR).

    The conjugate equation's zeroth-order term commutes with the Laplacian
    there, so it is applied as an exact integrating factor.
    """
    if b <= a:
        return 0.0
    cfg = traj.cfg
    if cfg.is_sphere:
        n = cfg.dimension
        return n * (n - 1) * effective_time(traj, a, b)
    knots = [float(u) for u in traj.times if a < u < b] + cfg.coupling.breakpoints(a, b)
    return adaptive_simpson(lambda u: float(curvature(traj.state_at(u)).S[0]), a, b,
                            tol=1e-15 * max(1.0, b - a), breakpoints=knots)


# ---------------------------------------------------------------------------
# spectral oracles
# ---------------------------------------------------------------------------

def sphere_series_terms(T, n, tail_tol=TAIL_TOL):
    """Number of Gegenbauer terms so that the neglected tail is below tail_tol.

    Terms are dim_k exp(-k(k+n-1) T)/vol(S^n), each bounding its mode since
    |P_k| <= 1.  Once consecutive ratios stay below 1/2 the tail after K is
    at most twice the first neglected term.
    """
    if T <= 0:
        raise LabError("SERIES_NOT_CONVERGED", "effective time must be positive")
    k = np.arange(MAX_TERMS + 2, dtype=float)
    logt = np.log(sphere_multiplicity(k, n)) - k * (k + n - 1) * T - math.log(sphere_volume(n))
    ratio_ok = np.diff(logt) < -math.log(2.0)
    # last index where the ratio condition fails
    bad = np.nonzero(~ratio_ok)[0]
    start = 0 if bad.size == 0 else bad[-1] + 1
    small = np.nonzero((np.arange(k.size) > start) & (math.log(2.0) + logt < math.log(tail_tol)))[0]
    if small.size == 0 or small[0] > MAX_TERMS:
        raise LabError("SERIES_NOT_CONVERGED", f"more than {MAX_TERMS} terms needed at T={T:g}")
    return int(small[0])


def sphere_kernel_unit(T, angles, n, tail_tol=TAIL_TOL, max_degree=None):
    """Heat kernel of the unit S^n at time T as a function of geodesic angle."""
    kmax = sphere_series_terms(T, n, tail_tol) if max_degree is None else int(max_degree)
    x = np.cos(np.asarray(angles, dtype=float))
    lam = 0.5 * (n - 1)
    p_prev, p = np.ones_like(x), x.copy()
    k = np.arange(kmax + 1, dtype=float)
    coef = sphere_multiplicity(k, n) * np.exp(-k * (k + n - 1) * T)
    total = coef[0] * p_prev
    if kmax >= 1:
        total = total + coef[1] * p
    for j in range(1, kmax):
        p_prev, p = p, ((2 * j + 2 * lam) * x * p - j * p_prev) / (j + 2 * lam)
        total = total + coef[j + 1] * p
    return total / sphere_volume(n)


def _sphere_field(traj, source, s, t, values, solver, direction, meta):
    st = traj.state_at(t if direction == "forward" else s)
    return KernelField(Variant.ROUND_SPHERE, source, s, t, solver, direction,
                       [values], [st.profile_weights], meta)


def sphere_oracle(traj, y, s, t, direction="forward", tail_tol=TAIL_TOL, max_degree=None):
    """Closed-form kernel on the shrinking round sphere.

    G = c(s)^{-n/2} K_unit(T(s,t), theta), g(t) = c(t) g_unit,
    T(s,t) = integral of 1/c over [s, t].
    """
    cfg = traj.cfg
    if not cfg.is_sphere:
        raise LabError("UNSUPPORTED_VARIANT", "sphere_oracle needs ROUND_SPHERE")
    if not s < t:
        raise LabError("BAD_TIME_ORDER", "need s < t")
    n = cfg.dimension
    T = effective_time(traj, s, t)
    c_s = float(traj.state_at(s).metric[0])
    vals = c_s ** (-n / 2.0) * sphere_kernel_unit(T, cfg.sphere_grid.theta, n, tail_tol, max_degree)
    return _sphere_field(traj, y, s, t, vals, "SPECTRAL_ORACLE", direction,
                         {"effective_time": T, "tail_tol": tail_tol})


def wrapped_gaussian_images(z, T, L):
    """Periodized 1-D heat kernel by the image (Gaussian) sum."""
    z = np.asarray(z, dtype=float)
    z = (z + 0.5 * L) % L - 0.5 * L
    m = int(math.ceil(math.sqrt(4.0 * T * 40.0) / L)) + 1
    shifts = np.arange(-m, m + 1)[:, None] * L
    return np.exp(-((z[None, :] + shifts) ** 2) / (4.0 * T)).sum(axis=0) / math.sqrt(4.0 * math.pi * T)


def wrapped_gaussian_fourier(z, T, L):
    """Periodized 1-D heat kernel by the Fourier (eigenfunction) sum."""
    z = np.asarray(z, dtype=float)
    kmax = int(math.ceil(L / (2.0 * math.pi) * math.sqrt(40.0 / T))) + 1
    k = 2.0 * math.pi * np.arange(1, kmax + 1)[:, None] / L
    return (1.0 + 2.0 * (np.exp(-k * k * T) * np.cos(k * z[None, :])).sum(axis=0)) / L


def wrapped_gaussian(z, T, L):
    if T < L * L / (4.0 * math.pi):
        return wrapped_gaussian_images(z, T, L)
    return wrapped_gaussian_fourier(z, T, L)


def theta_oracle(traj, y, s, t, direction="forward"):
    """Product of wrapped Gaussians in effective times T_j = int 1/g_j."""
    cfg = traj.cfg
    if cfg.variant is not Variant.TORUS_LINEAR:
        raise LabError("UNSUPPORTED_VARIANT", "theta_oracle needs TORUS_LINEAR")
    if not s < t:
        raise LabError("BAD_TIME_ORDER", "need s < t")
    st = traj.state_at(t if direction == "forward" else s)
    g_s = traj.state_at(s).metric
    factors, times = [], []
    for j, ax in enumerate(cfg.axes):
        T = effective_time(traj, s, t, axis=j)
        times.append(T)
        factors.append(wrapped_gaussian(ax.x - ax.x[y[j]], T, ax.length) / math.sqrt(g_s[j]))
    return KernelField(cfg.variant, tuple(y), s, t, "SPECTRAL_ORACLE", direction,
                       factors, st.axis_weights, {"effective_times": times})


# ---------------------------------------------------------------------------
# Crank-Nicolson solvers
# ---------------------------------------------------------------------------

def _startup_steps(taus, startup):
    """Split the first ``startup`` steps into implicit Euler half-steps.

    Crank-Nicolson barely damps modes with large dtau*|lambda|; a short
    implicit Euler start (Rannacher smoothing) removes them without losing
    second-order accuracy.
    """
    taus = np.asarray(taus, dtype=float)
    k = min(startup, taus.size - 1)
    halves = []
    for a, b in zip(taus[:k], taus[1:k + 1]):
        halves.append((0.5 * (a + b), 0.5 * abs(b - a)))
        halves.append((b, 0.5 * abs(b - a)))
    return halves, taus[k:]


def _cn_diagonal(coef, symbol, taus, startup=2):
    """CN for dc/dsigma = symbol(tau) c with a diagonal generator."""
    halves, taus = _startup_steps(taus, startup)
    for tau, ds in halves:
        coef = coef / (1.0 - ds * symbol(tau))
    prev = symbol(taus[0])
    for a, b in zip(taus[:-1], taus[1:]):
        ds = abs(b - a)
        nxt = symbol(b)
        coef = coef * (1.0 + 0.5 * ds * prev) / (1.0 - 0.5 * ds * nxt)
        prev = nxt
    return coef


def _cn_dense(u, generator, taus, startup=2):
    eye = np.eye(u.size)
    halves, taus = _startup_steps(taus, startup)
    for tau, ds in halves:
        u = linalg.solve(eye - ds * generator(tau), u)
    prev = generator(taus[0])
    for a, b in zip(taus[:-1], taus[1:]):
        ds = abs(b - a)
        nxt = generator(b)
        u = linalg.solve(eye - 0.5 * ds * nxt, u + 0.5 * ds * (prev @ u))
        prev = nxt
    return u


def _bandlimited_factor(ax, center, T):
    """Wrapped Gaussian restricted to the modes the grid resolves."""
    k = ax.wavenumbers
    coef = np.exp(-k * k * T) * np.exp(-1j * k * ax.x[center]) / ax.length
    return np.real(np.fft.ifft(coef * ax.n))


def _solve(traj, source, s, t, direction, steps, eps_frac):
    cfg = traj.cfg
    _check_order(traj, s, t)
    if steps < 1:
        raise LabError("BAD_CONFIG", "steps must be positive")
    forward = direction == "forward"
    analytic = cfg.variant is not Variant.COUPLED_CIRCLE
    eps = eps_frac * (t - s) if analytic else 0.0
    # pseudo-time runs from the delta towards the far end
    if forward:
        taus = np.linspace(s + eps, t, steps + 1)
        near = (s, s + eps)
    else:
        taus = np.linspace(t - eps, s, steps + 1)
        near = (t - eps, t)
    meta = {"steps": steps, "mollify_eps": eps, "dtau": abs(taus[1] - taus[0])}
    solver = "FORWARD_PDE" if forward else "CONJUGATE_PDE"

    if cfg.is_sphere:
        grid = cfg.sphere_grid
        n = cfg.dimension
        mu = grid.eigenvalues
        T_eps = effective_time(traj, *near)
        c_ref = float(traj.state_at(near[0]).metric[0])
        coef = c_ref ** (-n / 2.0) * sphere_multiplicity(grid.degrees, n) * np.exp(-mu * T_eps) / sphere_volume(n)

        def symbol(tau):
            return -mu / float(traj.state_at(tau).metric[0])

        coef = _cn_diagonal(coef, symbol, taus)
        if not forward:
            coef = coef * math.exp(-potential_integral(traj, s, taus[0]))
        return _sphere_field(traj, source, s, t, grid.from_modes(coef), solver, direction, meta)

    ref_state = traj.state_at(taus[0])
    factors = []
    for j, ax in enumerate(cfg.axes):
        idx = source[j]
        if analytic:
            T_eps = effective_time(traj, *near, axis=j)
            g_ref = _axis_metric(traj, near[0], j)
            u = _bandlimited_factor(ax, idx, T_eps) / math.sqrt(g_ref)
        else:
            w = ref_state.axis_weights[j]
            u = np.zeros(ax.n)
            u[idx] = 1.0 / w[idx]
        with_potential = (not forward) and j == 0
        if cfg.variant is Variant.COUPLED_CIRCLE and j == 0:
            u = _cn_dense(u, _coupled_generator(traj, ax, with_potential), taus)
        else:
            u = np.real(np.fft.ifft(_cn_diagonal(np.fft.fft(u), _axis_symbol(traj, ax, j), taus)))
            if with_potential:
                u = u * math.exp(-potential_integral(traj, s, taus[0]))
        factors.append(u)
    st = traj.state_at(t if forward else s)
    return KernelField(cfg.variant, tuple(source), s, t, solver, direction, factors, st.axis_weights, meta)


def _axis_symbol(traj, ax, j):

    def symbol(tau):
        return ax.d2_symbol / float(traj.state_at(tau).axis_metric()[j])

    return symbol


def _coupled_generator(traj, ax, with_potential):
    d1 = ax.matrix(ax.d1_symbol)
    d2 = ax.matrix(ax.d2_symbol)

    def generator(tau):
        st = traj.state_at(tau)
        A = st.metric
        dA = ax.deriv(A)
        L = (d2 - (dA / (2.0 * A))[:, None] * d1) / A[:, None]
        if with_potential:
            L = L - np.diag(curvature(st).S)
        return L

    return generator


def forward_solve(traj, y, s, t, steps=DEFAULT_STEPS, eps_frac=MOLLIFY_FRACTION):
    """G(., t; y, s) by Crank-Nicolson with the trajectory Laplacian."""
    return _solve(traj, y, s, t, "forward", steps, eps_frac)


def conjugate_solve(traj, x, t, s, steps=DEFAULT_STEPS, eps_frac=MOLLIFY_FRACTION):
    """G(x, t; ., s) by Crank-Nicolson on the conjugate equation backward in s."""
    return _solve(traj, x, s, t, "conjugate", steps, eps_frac)


# ---------------------------------------------------------------------------
# semigroup and mass diagnostics
# ---------------------------------------------------------------------------

def _oracle_value(traj, x, t, y, s):
    cfg = traj.cfg
    if cfg.is_sphere:
        return sphere_oracle(traj, 0, s, t).value(sphere_relative(x, y))
    return theta_oracle(traj, y, s, t).value(x)


def semigroup_check(traj, x, t, y, s, m, method="oracle", steps=DEFAULT_STEPS, quad_points=(400, 200)):
    """Relative residual of G(x,t;y,s) = int G(x,t;z,m) G(z,m;y,s) dmu(z,m)."""
    if not (s < m < t):
        raise LabError("BAD_TIME_ORDER", f"need s < m < t, got s={s:g}, m={m:g}, t={t:g}")
    _check_order(traj, s, t)
    cfg = traj.cfg
    if method == "oracle":
        if cfg.variant is Variant.COUPLED_CIRCLE:
            raise LabError("UNSUPPORTED_VARIANT", "no spectral oracle for COUPLED_CIRCLE")
        direct = _oracle_value(traj, x, t, y, s)
        if cfg.is_sphere:
            total = _sphere_semigroup(traj, sphere_relative(x, y), t, s, m, quad_points)
        else:
            total = _torus_semigroup(traj, x, t, y, s, m)
        return abs(total - direct) / abs(direct)
    if method != "pde":
        raise LabError("BAD_CONFIG", f"unknown semigroup method {method!r}")
    if cfg.is_sphere and sphere_relative(x, y) != 0:
        raise LabError("UNSUPPORTED_VARIANT", "zonal PDE semigroup check needs x = y on the sphere")
    late = conjugate_solve(traj, x, t, m, steps=steps)
    early = forward_solve(traj, y, s, m, steps=steps)
    total = np.prod([np.sum(a * b * w) for a, b, w in zip(late.factors, early.factors, early.weights)])
    whole = forward_solve(traj, y, s, t, steps=steps)
    direct = whole.value(x if not cfg.is_sphere else 0)
    return abs(total - direct) / abs(direct)


def _sphere_semigroup(traj, theta_idx, t, s, m, quad_points):
    cfg = traj.cfg
    n = cfg.dimension
    theta_x = cfg.sphere_grid.theta[theta_idx]
    nt, npsi = quad_points
    gt, wt = np.polynomial.legendre.leggauss(nt)
    th = 0.5 * np.pi * (gt + 1.0)
    wt = 0.5 * np.pi * wt
    gp, wp = np.polynomial.legendre.leggauss(npsi)
    ps = 0.5 * np.pi * (gp + 1.0)
    wp = 0.5 * np.pi * wp
    TH, PS = np.meshgrid(th, ps, indexing="ij")
    cosd = np.clip(np.cos(theta_x) * np.cos(TH) + np.sin(theta_x) * np.sin(TH) * np.cos(PS), -1.0, 1.0)
    c_s = float(traj.state_at(s).metric[0])
    c_m = float(traj.state_at(m).metric[0])
    T1 = effective_time(traj, m, t)
    T2 = effective_time(traj, s, m)
    late = c_m ** (-n / 2.0) * sphere_kernel_unit(T1, np.arccos(cosd).ravel(), n).reshape(TH.shape)
    early = c_s ** (-n / 2.0) * sphere_kernel_unit(T2, TH[:, 0], n)[:, None]
    # S^n measure: sin^{n-1}(theta) sin^{n-2}(psi) dtheta dpsi dS^{n-2}
    dens = np.sin(TH) ** (n - 1) * np.sin(PS) ** (n - 2) * sphere_volume(n - 2) * c_m ** (n / 2.0)
    return float(np.einsum("i,j,ij->", wt, wp, late * early * dens))


def _torus_semigroup(traj, x, t, y, s, m, points=2048):
    cfg = traj.cfg
    g_s = traj.state_at(s).metric
    total = 1.0
    for j, ax in enumerate(cfg.axes):
        L = ax.length
        z = np.arange(points) * L / points
        T1 = effective_time(traj, m, t, axis=j)
        T2 = effective_time(traj, s, m, axis=j)
        k1 = wrapped_gaussian(ax.x[x[j]] - z, T1, L)
        k2 = wrapped_gaussian(z - ax.x[y[j]], T2, L)
        total *= np.sum(k1 * k2) * L / points / math.sqrt(g_s[j])
    return float(total)


@dataclass
class MassDiagnostics:
    J: float
    J_tilde: float
    P: float
    Q: float


def mass_diagnostics(traj, x, t, y, s, steps=DEFAULT_STEPS):
    """J(t), J~(s), P(t) = int G^2 dmu(x,t), Q(s) = int G^2 dmu(y,s)."""
    fwd = forward_solve(traj, y, s, t, steps=steps)
    conj = conjugate_solve(traj, x, t, s, steps=steps)
    return MassDiagnostics(fwd.integral(), conj.integral(), fwd.integral_sq(), conj.integral_sq())

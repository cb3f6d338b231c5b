"""Model geometries, their discretizations, measures and curvature data.

Three closed model manifolds are supported:

* ``ROUND_SPHERE``: the round n-sphere of radius r, with a constant map.
  Fields are zonal profiles f(theta) on a uniform grid theta_j = j*pi/N.
* ``TORUS_LINEAR``: a flat n-torus with diagonal metric diag(A, B, C, ...)
  and the linear map x -> 2*pi*d*x1/L1 into the unit circle.
* ``COUPLED_CIRCLE``: the same torus with A = A(x1) varying along the first
  coordinate and map phi = 2*pi*d*x1/L1 + psi(x1).

On both tori every curvature quantity depends on x1 only, so curvature data
is stored as a profile along x1 (or along theta on the sphere).  Scalar
fields passed to :func:`integrate` and :func:`laplacian_apply` may be either
such a profile or, on tori, a full n-dimensional grid array.
"""

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .errors import LabError


class Variant(str, Enum):
    ROUND_SPHERE = "ROUND_SPHERE"
    TORUS_LINEAR = "TORUS_LINEAR"
    COUPLED_CIRCLE = "COUPLED_CIRCLE"


def sphere_volume(n):
    """Volume of the unit n-sphere S^n."""
    return 2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)


# ---------------------------------------------------------------------------
# coupling schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingSchedule:
    """Time-dependent coupling alpha(t).

    ``CONSTANT``: alpha0.  ``LINEAR_FLOOR``: max(alpha0 - rate*t, floor).
    ``EXPONENTIAL``: floor + (alpha0 - floor)*exp(-rate*t).
    """

    form: str = "CONSTANT"
    alpha0: float = 1.0
    rate: float = 0.0
    floor: float = None

    def __post_init__(self):
        if self.form not in ("CONSTANT", "LINEAR_FLOOR", "EXPONENTIAL"):
            raise LabError("BAD_CONFIG", f"unknown coupling form {self.form!r}")
        if not self.alpha0 > 0:
            raise LabError("HYPOTHESIS", "coupling alpha(t) must be a positive function (alpha0 > 0)")
        if self.rate < 0:
            raise LabError(
                "HYPOTHESIS",
                "coupling alpha(t) must be non-increasing; a negative rate makes it increase",
            )
        if self.floor is None:
            object.__setattr__(self, "floor", self.alpha0)
        if not (0 < self.floor <= self.alpha0):
            raise LabError("HYPOTHESIS", "coupling floor must satisfy 0 < floor <= alpha0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.form == "CONSTANT":
            out = np.full_like(t, self.alpha0)
        elif self.form == "LINEAR_FLOOR":
            out = np.maximum(self.alpha0 - self.rate * t, self.floor)
        else:
            out = self.floor + (self.alpha0 - self.floor) * np.exp(-self.rate * t)
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = float(t)
        if self.form == "CONSTANT":
            return 0.0
        if self.form == "LINEAR_FLOOR":
            return -self.rate if self.alpha0 - self.rate * t > self.floor else 0.0
        return -self.rate * (self.alpha0 - self.floor) * math.exp(-self.rate * t)

    def kink_time(self):
        if self.form == "LINEAR_FLOOR" and self.rate > 0 and self.floor < self.alpha0:
            return (self.alpha0 - self.floor) / self.rate
        return None

    def breakpoints(self, t0, t1):
        """Times strictly inside (t0, t1) where alpha is not smooth."""
        tk = self.kink_time()
        return [tk] if tk is not None and t0 < tk < t1 else []

    def integral(self, t0, t1):
        """Exact integral of alpha over [t0, t1]."""
        def prim(t):
            if self.form == "CONSTANT":
                return self.alpha0 * t
            if self.form == "EXPONENTIAL":
                if self.rate == 0:
                    return self.alpha0 * t
                return self.floor * t - (self.alpha0 - self.floor) * math.exp(-self.rate * t) / self.rate
            tk = self.kink_time()
            if tk is None or t <= tk:
                return self.alpha0 * t - 0.5 * self.rate * t * t
            return self.alpha0 * tk - 0.5 * self.rate * tk * tk + self.floor * (t - tk)
        return prim(t1) - prim(t0)


# ---------------------------------------------------------------------------
# discretizations
# ---------------------------------------------------------------------------

def _is_power_of_two(n):
    return n > 0 and (n & (n - 1)) == 0


class CircleAxis:
    """Uniform periodic grid on [0, L) with first/second derivative symbols.

    Derivatives are spectral when N is a power of two and fourth-order
    centered differences otherwise.  Both are circulant, so they are applied
    through the FFT.
    """

    def __init__(self, n_points, length):
        self.n = int(n_points)
        self.length = float(length)
        self.h = self.length / self.n
        self.x = np.arange(self.n) * self.h
        self.spectral = _is_power_of_two(self.n)
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        self.wavenumbers = k
        if self.spectral:
            d1 = 1j * k
            if self.n % 2 == 0:
                d1[self.n // 2] = 0.0
            d2 = -k * k
        else:
            kh = k * self.h
            d1 = 1j * (8.0 * np.sin(kh) - np.sin(2.0 * kh)) / (6.0 * self.h)
            d2 = (32.0 * np.cos(kh) - 2.0 * np.cos(2.0 * kh) - 30.0) / (12.0 * self.h ** 2)
        self.d1_symbol = d1
        self.d2_symbol = d2

    def _apply(self, symbol, f, axis):
        return np.real(np.fft.ifft(symbol_along(symbol, f.ndim, axis) * np.fft.fft(f, axis=axis), axis=axis))

    def deriv(self, f, axis=0):
        return self._apply(self.d1_symbol, np.asarray(f, dtype=float), axis)

    def deriv2(self, f, axis=0):
        return self._apply(self.d2_symbol, np.asarray(f, dtype=float), axis)

    def matrix(self, symbol):
        """Dense circulant matrix of a symbol."""
        col = np.real(np.fft.ifft(symbol))
        idx = (np.arange(self.n)[:, None] - np.arange(self.n)[None, :]) % self.n
        return col[idx]


def symbol_along(symbol, ndim, axis):
    shape = [1] * ndim
    shape[axis] = symbol.size
    return symbol.reshape(shape)


def simpson_weights(n_intervals, h):
    if n_intervals % 2:
        raise LabError("BAD_CONFIG", "Simpson grid needs an even number of intervals")
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def gegenbauer_normalized(kmax, x, lam):
    """P_k(x) = C_k^lam(x)/C_k^lam(1) for k = 0..kmax, shape (len(x), kmax+1)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((x.size, kmax + 1))
    out[:, 0] = 1.0
    if kmax >= 1:
        out[:, 1] = x
    for k in range(1, kmax):
        out[:, k + 1] = ((2 * k + 2 * lam) * x * out[:, k] - k * out[:, k - 1]) / (k + 2 * lam)
    return out


def sphere_multiplicity(k, n):
    """Dimension of the degree-k eigenspace of the Laplacian on S^n."""
    k = np.asarray(k, dtype=float)
    return (2 * k + n - 1) / (n - 1) * np.exp(gammaln(k + n - 1) - gammaln(k + 1) - gammaln(n - 1))


class SphereGrid:
    """Zonal discretization of S^n on theta_j = j*pi/N, j = 0..N.

    The grid space is spanned by cos(k theta), k <= N, equivalently by the
    normalized Gegenbauer polynomials P_k(cos theta).  The Laplacian maps this
    space into itself, so collocation is exact on it.
    """

    def __init__(self, n_intervals, n):
        self.n_intervals = N = int(n_intervals)
        self.dim = n
        self.lam = 0.5 * (n - 1)
        self.theta = np.linspace(0.0, np.pi, N + 1)
        self.cos = np.cos(self.theta)
        h = np.pi / N
        # integral over S^n of a zonal f = vol(S^{n-1}) * int f sin^{n-1}
        self.unit_weights = simpson_weights(N, h) * np.sin(self.theta) ** (n - 1) * sphere_volume(n - 1)

        k = np.arange(N + 1)
        self.degrees = k
        self.eigenvalues = k * (k + n - 1.0)
        # cosine transform: values -> coefficients a_k of sum a_k cos(k theta)
        ck = np.cos(np.outer(self.theta, k))
        cinv = 2.0 / N * ck.T.copy()
        cinv[:, [0, -1]] *= 0.5
        cinv[[0, -1], :] *= 0.5
        self._cos_inv = cinv
        sk = -k[None, :] * np.sin(np.outer(self.theta, k))
        self.deriv_matrix = sk @ cinv
        # sin(k theta)/sin(theta) = U_{k-1}(cos theta), regular at the poles
        u = np.empty((N + 1, N + 1))
        u[:, 0] = 0.0
        u[:, 1] = 1.0
        if N >= 2:
            u[:, 2] = 2.0 * self.cos
        for j in range(2, N):
            u[:, j + 1] = 2.0 * self.cos * u[:, j] - u[:, j - 1]
        lap = -(k ** 2)[None, :] * ck - (n - 1) * self.cos[:, None] * k[None, :] * u
        self.laplacian_unit = lap @ cinv
        self.modal = gegenbauer_normalized(N, self.cos, self.lam)
        self._modal_lu = linalg.lu_factor(self.modal)

    def to_modes(self, f):
        return linalg.lu_solve(self._modal_lu, f)

    def from_modes(self, c):
        return self.modal @ c


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def fourier_profile(n_points, length, spec):
    """Samples of a periodic profile on the uniform grid of a circle.

    ``spec`` is a number (constant profile) or a mapping with ``mean`` and
    optional ``cos``/``sin`` lists; entry k-1 multiplies cos(2 pi k x / L).
    """
    x = length * np.arange(n_points) / n_points
    if isinstance(spec, (int, float)):
        return np.full(n_points, float(spec))
    unknown = set(spec) - {"mean", "cos", "sin"}
    if unknown:
        raise LabError("BAD_CONFIG", f"unknown profile keys {sorted(unknown)}")
    out = np.full(n_points, float(spec.get("mean", 0.0)))
    for name, fn in (("cos", np.cos), ("sin", np.sin)):
        for k, c in enumerate(spec.get(name, ()), start=1):
            out += float(c) * fn(2.0 * np.pi * k * x / length)
    return out


@dataclass(frozen=True)
class ManifoldConfig:
    """One of the three model geometries with initial metric and map data.

    ``metric0``: ignored for the sphere (r0**2 is used); the diagonal
    (A0, B0, C0, ...) for ``TORUS_LINEAR``; samples A0[i] for
    ``COUPLED_CIRCLE``, whose fiber coordinates carry ``fiber_metric``.
    ``frozen`` switches off the flow (static test mode).
    """

    variant: Variant
    dimension: int = 3
    sphere_radius0: float = 1.0
    torus_lengths: tuple = (2 * math.pi, 2 * math.pi, 2 * math.pi)
    metric0: tuple = (1.0, 1.0, 1.0)
    fiber_metric: tuple = (1.0, 1.0)
    winding: int = 0
    perturbation0: tuple = None
    grid: int = 64
    coupling: CouplingSchedule = field(default_factory=CouplingSchedule)
    frozen: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        n = self.dimension
        if int(n) != n or n < 3:
            raise LabError("HYPOTHESIS", f"dimension n must satisfy n >= 3, got {n}")
        if self.grid < 4:
            raise LabError("BAD_CONFIG", "grid must have at least 4 points")
        if self.variant is Variant.ROUND_SPHERE:
            if not self.sphere_radius0 > 0:
                raise LabError("BAD_CONFIG", "sphere radius must be positive")
            if self.grid % 2:
                raise LabError("BAD_CONFIG", "sphere theta grid needs an even number of intervals")
            object.__setattr__(self, "_disc", SphereGrid(self.grid, n))
            return
        lengths = tuple(float(v) for v in self.torus_lengths)
        if len(lengths) != n or min(lengths) <= 0:
            raise LabError("BAD_CONFIG", f"torus_lengths must hold {n} positive periods")
        object.__setattr__(self, "torus_lengths", lengths)
        if self.variant is Variant.TORUS_LINEAR:
            metric = tuple(float(v) for v in self.metric0)
            if len(metric) != n:
                raise LabError("BAD_CONFIG", f"TORUS_LINEAR metric0 must hold {n} diagonal entries")
        else:
            metric = tuple(float(v) for v in self.metric0)
            if len(metric) != self.grid:
                raise LabError("BAD_CONFIG", "COUPLED_CIRCLE metric0 must hold one sample per grid point")
            fib = tuple(float(v) for v in self.fiber_metric)
            if len(fib) != n - 1 or min(fib) <= 0:
                raise LabError("BAD_CONFIG", f"fiber_metric must hold {n - 1} positive entries")
            object.__setattr__(self, "fiber_metric", fib)
            pert = self.perturbation0
            pert = tuple(0.0 for _ in range(self.grid)) if pert is None else tuple(float(v) for v in pert)
            if len(pert) != self.grid:
                raise LabError("BAD_CONFIG", "perturbation0 must hold one sample per grid point")
            object.__setattr__(self, "perturbation0", pert)
        if min(metric) <= 0:
            raise LabError("NON_POSITIVE_METRIC", "initial metric samples must be strictly positive")
        object.__setattr__(self, "metric0", metric)
        object.__setattr__(self, "_disc", tuple(CircleAxis(self.grid, L) for L in lengths))

    @property
    def is_sphere(self):
        return self.variant is Variant.ROUND_SPHERE

    @property
    def sphere_grid(self):
        return self._disc

    @property
    def axes(self):
        return self._disc

    @property
    def slope(self):
        """Constant part kappa = 2*pi*d/L1 of the map derivative."""
        if self.is_sphere:
            return 0.0
        return 2.0 * math.pi * self.winding / self.torus_lengths[0]

    @property
    def degeneracy_time(self):
        if self.is_sphere and not self.frozen:
            return self.sphere_radius0 ** 2 / (2.0 * (self.dimension - 1))
        return math.inf

    def initial_metric(self):
        if self.is_sphere:
            return np.array([self.sphere_radius0 ** 2])
        return np.array(self.metric0, dtype=float)

    def initial_map(self):
        if self.variant is Variant.COUPLED_CIRCLE:
            return np.array(self.perturbation0, dtype=float)
        return None

    def initial_state(self):
        return GeometryState(self, 0.0, self.initial_metric(), self.initial_map())


# ---------------------------------------------------------------------------
# state and curvature
# ---------------------------------------------------------------------------

class GeometryState:
    """Metric and map degrees of freedom at one time, with cached weights.

    ``metric`` is [r^2] on the sphere, the diagonal (A, B, C, ...) on
    ``TORUS_LINEAR`` and the samples A[i] on ``COUPLED_CIRCLE``.  ``psi`` is
    the periodic part of the map on ``COUPLED_CIRCLE`` (None otherwise).
    """

    def __init__(self, cfg, time, metric, psi=None):
        self.cfg = cfg
        self.time = float(time)
        self.metric = np.array(metric, dtype=float)
        self.psi = None if psi is None else np.array(psi, dtype=float)
        if np.any(~(self.metric > 0)):
            raise LabError("NON_POSITIVE_METRIC", f"metric degree of freedom <= 0 at t={self.time:g}")
        self.metric.setflags(write=False)
        if self.psi is not None:
            self.psi.setflags(write=False)
        self.axis_weights = self._axis_weights()
        # weights for profiles: along theta (sphere) or x1 (tori) with fibers integrated out
        if cfg.is_sphere:
            self.profile_weights = self.axis_weights[0]
        else:
            fiber = np.prod([w.sum() for w in self.axis_weights[1:]])
            self.profile_weights = self.axis_weights[0] * fiber

    @property
    def alpha(self):
        return self.cfg.coupling(self.time)

    def axis_metric(self):
        """Per-axis metric coefficients on tori (first entry may be an array)."""
        cfg = self.cfg
        if cfg.variant is Variant.TORUS_LINEAR:
            return [self.metric[j] for j in range(cfg.dimension)]
        return [self.metric] + list(cfg.fiber_metric)

    def _axis_weights(self):
        cfg = self.cfg
        if cfg.is_sphere:
            r2 = self.metric[0]
            return [cfg.sphere_grid.unit_weights * r2 ** (cfg.dimension / 2.0)]
        out = []
        for ax, g in zip(cfg.axes, self.axis_metric()):
            out.append(np.sqrt(g) * ax.h * np.ones(ax.n))
        return out

    @property
    def volume(self):
        return float(self.profile_weights.sum())

    def analytic_volume(self):
        cfg = self.cfg
        if cfg.is_sphere:
            return sphere_volume(cfg.dimension) * self.metric[0] ** (cfg.dimension / 2.0)
        if cfg.variant is Variant.TORUS_LINEAR:
            return float(np.prod(np.sqrt(self.metric)) * np.prod(cfg.torus_lengths))
        ax = cfg.axes[0]
        fib = np.prod(np.sqrt(cfg.fiber_metric)) * np.prod(cfg.torus_lengths[1:])
        return float(np.sum(np.sqrt(self.metric)) * ax.h * fib)

    def map_derivative(self):
        """d phi / d x1 on the x1 grid (tori)."""
        cfg = self.cfg
        if cfg.variant is Variant.TORUS_LINEAR:
            return np.full(cfg.grid, cfg.slope)
        return cfg.slope + cfg.axes[0].deriv(self.psi)


@dataclass
class CurvatureData:
    """Curvature and map quantities as profiles (theta on S^n, x1 on tori).

    ``ric_diag`` and ``S_diag`` hold orthonormal-frame diagonal components,
    shape (n, profile length).
    """

    R: np.ndarray
    ric_diag: np.ndarray
    grad_phi_sq: np.ndarray
    S: np.ndarray
    S_diag: np.ndarray
    tension: np.ndarray
    alpha: float


def curvature(state, cfg=None):
    cfg = state.cfg if cfg is None else cfg
    n = cfg.dimension
    alpha = state.alpha
    if cfg.is_sphere:
        m = cfg.sphere_grid.theta.size
        r2 = state.metric[0]
        R = np.full(m, n * (n - 1) / r2)
        ric = np.full((n, m), (n - 1) / r2)
        zero = np.zeros(m)
        return CurvatureData(R, ric, zero, R.copy(), ric.copy(), zero.copy(), alpha)

    ax = cfg.axes[0]
    A = np.broadcast_to(state.metric[0] if cfg.variant is Variant.TORUS_LINEAR else state.metric, (ax.n,))
    dphi = state.map_derivative()
    grad_sq = dphi ** 2 / A
    R = np.zeros(ax.n)
    ric = np.zeros((n, ax.n))
    S = R - alpha * grad_sq
    S_diag = ric.copy()
    S_diag[0] = -alpha * grad_sq
    if cfg.variant is Variant.TORUS_LINEAR:
        tension = np.zeros(ax.n)
    else:
        dA = ax.deriv(A)
        d2phi = ax.deriv2(state.psi)
        tension = (d2phi - dA / (2.0 * A) * dphi) / A
    return CurvatureData(R, ric, grad_sq, S, S_diag, tension, alpha)


def laplacian_apply(state, f):
    """Laplace-Beltrami operator of g(state.time) applied to a field."""
    cfg = state.cfg
    f = np.asarray(f, dtype=float)
    if cfg.is_sphere:
        return cfg.sphere_grid.laplacian_unit @ f / state.metric[0]
    out = np.zeros_like(f)
    for j, (ax, g) in enumerate(zip(cfg.axes, state.axis_metric())):
        if j >= f.ndim:
            break
        if j == 0 and cfg.variant is Variant.COUPLED_CIRCLE:
            A = g.reshape((-1,) + (1,) * (f.ndim - 1))
            dA = ax.deriv(g).reshape(A.shape)
            out += (ax.deriv2(f, axis=0) - dA / (2.0 * A) * ax.deriv(f, axis=0)) / A
        else:
            out += ax.deriv2(f, axis=j) / g
    return out


def integrate(state, f):
    """Integral of a field against the Riemannian measure of g(state.time)."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        return float(np.dot(f, state.profile_weights))
    out = f
    for w in reversed(state.axis_weights[: f.ndim]):
        out = out @ w
    return float(out)


def gradient_sq(state, f):
    """|grad f|^2 for a profile or full torus field."""
    cfg = state.cfg
    f = np.asarray(f, dtype=float)
    if cfg.is_sphere:
        return (cfg.sphere_grid.deriv_matrix @ f) ** 2 / state.metric[0]
    out = np.zeros_like(f)
    for j, (ax, g) in enumerate(zip(cfg.axes, state.axis_metric())):
        if j >= f.ndim:
            break
        gj = np.asarray(g).reshape((-1,) + (1,) * (f.ndim - 1)) if j == 0 else g
        out += ax.deriv(f, axis=j) ** 2 / gj
    return out

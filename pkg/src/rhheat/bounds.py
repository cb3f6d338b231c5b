"""Comparison quantities and heat-kernel upper bounds along the flow.

With m0 = 1/inf S(., 0), c_n = 2/n and chi_{t,s} = (m0 - c_n t)/(m0 - c_n s):

    S(., tau) >= 1/(m0 - c_n tau)             (zero when inf S(., 0) >= 0)
    J(t) = int G dmu(x, t) <= chi_{t,s}^{n/2}
    H(tau) = int_s^tau [B/A - (3/4)/(m0 - c_n u)] du
    G(x,t;y,s) <= C_n / (I1^{n/4} I2^{n/4}),  C_n = (2/n)^{n/2}
        I1 = int_s^m chi_{tau,s}^-2 e^{2H/n} / A,   I2 = int_m^t e^{-2H/n} / A,
        m = (s + t)/2.

When S(., 0) > 0, A is constant and B = 0, and the bound collapses to
C~_n (t - s)^{-n/2}.
"""

import csv
from dataclasses import dataclass, field, asdict
import math

import numpy as np

from .errors import LabError
from .geometry import curvature
from .heatkernel import DEFAULT_STEPS, conjugate_solve, forward_solve, sphere_relative
from .quadrature import adaptive_simpson

H_TOL = 1e-8
BOUND_RTOL = 1e-11
PASS_TOL = 1e-2
CHAIN_TOL = 1e-6
DENOM_MIN = 1e-12


def check_hypotheses(cfg):
    """Theorem hypotheses: closed model manifold, n >= 3, alpha non-increasing."""
    if cfg.dimension < 3:
        raise LabError("HYPOTHESIS", f"n >= 3 required, got n={cfg.dimension}")
    sched = cfg.coupling
    if sched.rate < 0 or sched.alpha0 < 0 or sched.floor < 0:
        raise LabError("HYPOTHESIS", "coupling alpha(t) must be non-negative and non-increasing")


@dataclass
class ComparisonInputs:
    traj: object
    consts: object
    n: int
    inf_S0: float
    m0: float
    positive_case: bool

    @property
    def c_n(self):
        return 2.0 / self.n

    @property
    def C_n(self):
        return (2.0 / self.n) ** (self.n / 2.0)

    @property
    def Ctilde(self):
        """(4K/n)^{n/2}, the corollary constant as stated."""
        return (4.0 * self.consts.K / self.n) ** (self.n / 2.0)

    @property
    def Ctilde_squared(self):
        """(4K^2/n)^{n/2}: the collapse of theorem_bound with A = K^2."""
        return (4.0 * self.consts.K ** 2 / self.n) ** (self.n / 2.0)

    @classmethod
    def from_trajectory(cls, traj, consts, m0=None):
        check_hypotheses(traj.cfg)
        inf_S0 = float(curvature(traj.initial_state()).S.min())
        positive = inf_S0 >= 0 and m0 is None
        if m0 is None:
            m0 = math.inf if inf_S0 == 0 else 1.0 / inf_S0
        return cls(traj, consts, traj.cfg.dimension, inf_S0, float(m0), positive)


def _denominator(inputs, tau):
    d = inputs.m0 - inputs.c_n * tau
    if abs(d) < DENOM_MIN:
        raise LabError("DENOMINATOR_ZERO", f"m0 - c_n tau vanishes at tau={tau:g} (m0={inputs.m0:g})")
    return d


def s_lower_bound(inputs, tau):
    if tau < 0:
        raise LabError("BAD_TIME_ORDER", "tau must be nonnegative")
    if inputs.positive_case:
        return 0.0
    return 1.0 / _denominator(inputs, tau)


def chi(inputs, t, s):
    if s > t:
        raise LabError("BAD_TIME_ORDER", f"chi needs s <= t, got s={s:g}, t={t:g}")
    if inputs.positive_case:
        return 1.0
    return _denominator(inputs, t) / _denominator(inputs, s)


def _h(inputs, u):
    a = inputs.consts.A(u)
    if a <= 0:
        raise LabError("NONPOSITIVE_INTEGRAL", f"A({u:g}) = {a:g} is not positive")
    return inputs.consts.B(u) / a - 0.75 * s_lower_bound(inputs, u)


def _knots(inputs, a, b):
    return [k for k in inputs.consts.breakpoints() if a < k < b]


def H_integral(inputs, s, tau, tol=H_TOL):
    if tau < s:
        raise LabError("BAD_TIME_ORDER", f"H needs s <= tau, got s={s:g}, tau={tau:g}")
    return adaptive_simpson(lambda u: _h(inputs, u), s, tau, tol=tol, breakpoints=_knots(inputs, s, tau))


class _HCurve:
    """H(tau) from a fixed s, reusing integrals up to the curve knots."""

    def __init__(self, inputs, s, tol):
        self.inputs, self.s, self.tol = inputs, s, tol
        self.edges = [s] + _knots(inputs, s, math.inf)
        self.base = [0.0]

    def __call__(self, tau):
        i = int(np.searchsorted(self.edges, tau, side="right")) - 1
        while len(self.base) <= i:
            k = len(self.base)
            self.base.append(self.base[-1] + H_integral(self.inputs, self.edges[k - 1], self.edges[k], self.tol))
        return self.base[i] + H_integral(self.inputs, self.edges[i], tau, self.tol)


@dataclass
class TheoremParts:
    bound: float
    I1: float
    I2: float
    H_mid: float
    chi_mid: float
    P_bound: float
    Q_bound: float


def theorem_parts(inputs, t, s, rtol=BOUND_RTOL, h_tol=H_TOL):
    if not s < t:
        raise LabError("BAD_TIME_ORDER", f"theorem bound needs s < t, got s={s:g}, t={t:g}")
    n = inputs.n
    m = 0.5 * (s + t)
    H = _HCurve(inputs, s, h_tol)
    A = inputs.consts.A

    def f1(u):
        return chi(inputs, u, s) ** -2 * math.exp(2.0 / n * H(u)) / A(u)

    def f2(u):
        return math.exp(-2.0 / n * H(u)) / A(u)

    scale = (t - s) / A(s)
    I1 = adaptive_simpson(f1, s, m, tol=rtol * scale, breakpoints=_knots(inputs, s, m))
    I2 = adaptive_simpson(f2, m, t, tol=rtol * scale, breakpoints=_knots(inputs, m, t))
    if I1 <= 0 or I2 <= 0:
        raise LabError("NONPOSITIVE_INTEGRAL", f"I1={I1:g}, I2={I2:g}")
    Hm = H(m)
    Cn = inputs.C_n
    return TheoremParts(
        bound=Cn / (I1 ** (n / 4.0) * I2 ** (n / 4.0)),
        I1=I1,
        I2=I2,
        H_mid=Hm,
        chi_mid=chi(inputs, m, s),
        P_bound=Cn * math.exp(Hm) / I1 ** (n / 2.0),
        Q_bound=Cn * math.exp(-Hm) / I2 ** (n / 2.0),
    )


def theorem_bound(inputs, t, s):
    return theorem_parts(inputs, t, s).bound


def corollary_bound(inputs, t, s, convention="linear"):
    """C~_n (t-s)^{-n/2}; ``convention`` picks K ('linear') or K^2 ('squared')."""
    if not (inputs.positive_case and inputs.inf_S0 > 0):
        raise LabError("NOT_POSITIVE_CASE", f"corollary needs S(., 0) > 0, inf S = {inputs.inf_S0:g}")
    if not s < t:
        raise LabError("BAD_TIME_ORDER", f"corollary bound needs s < t, got s={s:g}, t={t:g}")
    if convention == "linear":
        c = inputs.Ctilde
    elif convention == "squared":
        c = inputs.Ctilde_squared
    else:
        raise LabError("BAD_CONFIG", f"unknown convention {convention!r}")
    return c * (t - s) ** (-inputs.n / 2.0)


def s_comparison_margin(inputs):
    """min over checkpoints and nodes of S - 1/(m0 - c_n tau)."""
    worst = math.inf
    for st in inputs.traj.checkpoints():
        worst = min(worst, float(curvature(st).S.min()) - s_lower_bound(inputs, st.time))
    return worst


# ---------------------------------------------------------------------------
# verification harness
# ---------------------------------------------------------------------------

@dataclass
class BoundRow:
    x: object
    y: object
    s: float
    t: float
    G_actual: float
    bound_theorem: float
    bound_corollary: float
    ratio_theorem: float
    ratio_corollary: float
    m0: float
    chi_mid: float
    H_mid: float
    J_t: float
    Jtilde_s: float
    P_mid: float
    Q_mid: float
    passed: bool
    bound_corollary_squared: float = math.nan
    ratio_corollary_squared: float = math.nan
    J_bound: float = math.nan
    P_bound: float = math.nan
    Q_bound: float = math.nan
    cs_ok: bool = True
    J_ok: bool = True
    P_ok: bool = True
    Q_ok: bool = True


@dataclass
class BoundReport:
    rows: list
    positive_case: bool
    a_convention: str
    constants_source: str
    s_margin: float
    notes: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def failures(self):
        return [r for r in self.rows if not r.passed]

    @property
    def chain_ok(self):
        return all(r.cs_ok for r in self.rows)

    @property
    def j_ok(self):
        return all(r.J_ok for r in self.rows)


CSV_COLUMNS = [
    "x", "y", "s", "t", "G_actual", "bound_theorem", "bound_corollary", "ratio_theorem",
    "ratio_corollary", "m0", "chi_mid", "H_mid", "J_t", "Jtilde_s", "P_mid", "Q_mid", "pass",
    "bound_corollary_squared", "ratio_corollary_squared", "J_bound", "P_bound", "Q_bound",
    "cs_ok", "J_ok", "P_ok", "Q_ok",
]


def _node_text(node):
    if isinstance(node, (tuple, list)):
        return ";".join(str(int(i)) for i in node)
    return str(int(node))


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return _node_text(v)


def export_report(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in report.rows:
            d = asdict(r)
            d["pass"] = d.pop("passed")
            writer.writerow([_fmt(d[c]) for c in CSV_COLUMNS])


def _ratio(bound, G):
    # roundoff can leave far-field kernel values at or just below zero
    return bound / G if G > 0 else math.inf


def _holds(bound, G):
    return bound >= (1.0 - PASS_TOL) * G


def verify_sample(inputs, x, t, y, s, steps=DEFAULT_STEPS):
    traj = inputs.traj
    n = inputs.n
    m = 0.5 * (s + t)
    sphere = traj.cfg.is_sphere
    if sphere:
        # zonal fields: every kernel is a profile about the pole
        x_eval, src_y, src_x = sphere_relative(x, y), 0, 0
    else:
        x_eval, src_y, src_x = tuple(x), tuple(y), tuple(x)
    whole = forward_solve(traj, src_y, s, t, steps=steps)
    early = forward_solve(traj, src_y, s, m, steps=steps)
    late = conjugate_solve(traj, src_x, t, m, steps=steps)
    back = conjugate_solve(traj, src_x, t, s, steps=steps)
    G = whole.value(x_eval)
    J_t, Jt_s = whole.integral(), back.integral()
    P, Q = early.integral_sq(), late.integral_sq()

    parts = theorem_parts(inputs, t, s)
    J_bound = chi(inputs, t, s) ** (n / 2.0)
    ratio_thm = _ratio(parts.bound, G)
    ok = _holds(parts.bound, G)
    if inputs.positive_case and inputs.inf_S0 > 0:
        bc = corollary_bound(inputs, t, s, "linear")
        bc2 = corollary_bound(inputs, t, s, "squared")
        rc, rc2 = _ratio(bc, G), _ratio(bc2, G)
        ok = ok and _holds(bc, G) and _holds(bc2, G)
    else:
        bc = bc2 = rc = rc2 = math.nan
    return BoundRow(
        x=x, y=y, s=s, t=t, G_actual=G,
        bound_theorem=parts.bound, bound_corollary=bc,
        ratio_theorem=ratio_thm, ratio_corollary=rc,
        m0=inputs.m0, chi_mid=parts.chi_mid, H_mid=parts.H_mid,
        J_t=J_t, Jtilde_s=Jt_s, P_mid=P, Q_mid=Q, passed=bool(ok),
        bound_corollary_squared=bc2, ratio_corollary_squared=rc2,
        J_bound=J_bound, P_bound=parts.P_bound, Q_bound=parts.Q_bound,
        cs_ok=bool(G <= math.sqrt(P * Q) + CHAIN_TOL),
        J_ok=bool(J_t <= J_bound + CHAIN_TOL),
        P_ok=bool(P <= parts.P_bound), Q_ok=bool(Q <= parts.Q_bound),
    )


def verify(inputs, samples, steps=DEFAULT_STEPS):
    """Bound report over samples (x, t, y, s); order follows ``samples``."""
    if not samples:
        raise LabError("BAD_CONFIG", "verify needs at least one sample")
    rows = [verify_sample(inputs, x, t, y, s, steps) for x, t, y, s in samples]
    return BoundReport(
        rows=rows,
        positive_case=inputs.positive_case,
        a_convention=inputs.consts.a_convention,
        constants_source=inputs.consts.source,
        s_margin=s_comparison_margin(inputs),
    )

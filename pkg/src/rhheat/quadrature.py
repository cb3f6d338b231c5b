"""Adaptive Simpson quadrature and Richardson halving checks."""

import math

from .errors import LabError


def adaptive_simpson(f, a, b, tol=1e-10, breakpoints=(), max_depth=50):
    """Integrate f over [a, b] by recursive Simpson with Richardson correction.

    ``breakpoints`` split the interval first so that kinks of piecewise
    smooth integrands fall on panel edges.
    """
    if b == a:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    edges = [a] + sorted(p for p in breakpoints if a < p < b) + [b]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        piece_tol = tol * (hi - lo) / (b - a)
        total += _simpson_piece(f, lo, hi, piece_tol, max_depth)
    return sign * total


def _simpson_piece(f, a, b, tol, max_depth):
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    # explicit stack keeps deep refinements off the Python call stack
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    while stack:
        a, b, fa, fm, fb, whole, tol, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        if not math.isfinite(delta):
            raise LabError("QUADRATURE_FAILED", f"non-finite integrand near [{a:g}, {b:g}]")
        if depth >= 4 and abs(delta) <= 15.0 * tol:
            total += left + right + delta / 15.0
        elif depth >= max_depth:
            raise LabError("QUADRATURE_FAILED", f"no convergence on [{a:g}, {b:g}] at depth {depth}")
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * tol, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * tol, depth + 1))
    return total


def composite_simpson(f, a, b, panels, breakpoints=()):
    """Composite Simpson with ``panels`` panels on each smooth piece."""
    edges = [a] + sorted(p for p in breakpoints if a < p < b) + [b]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        h = (hi - lo) / (2 * panels)
        acc = f(lo) + f(hi)
        for i in range(1, 2 * panels):
            acc += (4.0 if i % 2 else 2.0) * f(lo + i * h)
        total += acc * h / 3.0
    return total


def richardson_change(f, a, b, panels=64, breakpoints=()):
    """Relative change of composite Simpson when the panel width is halved."""
    coarse = composite_simpson(f, a, b, panels, breakpoints)
    fine = composite_simpson(f, a, b, 2 * panels, breakpoints)
    scale = max(abs(fine), 1e-300)
    return abs(fine - coarse) / scale

import math

import pytest
from hypothesis import given, strategies as st

from rhheat.errors import LabError
from rhheat.quadrature import adaptive_simpson, composite_simpson, richardson_change


@pytest.mark.parametrize("f, a, b, exact", [
    (math.sin, 0.0, math.pi, 2.0),
    (math.exp, -1.0, 2.0, math.e ** 2 - math.exp(-1)),
    (lambda x: 1.0 / (1.0 + x * x), 0.0, 1.0, math.pi / 4),
])
def test_adaptive_simpson_exact(f, a, b, exact):
    assert adaptive_simpson(f, a, b, tol=1e-12) == pytest.approx(exact, abs=1e-11)


def test_reversed_and_empty_interval():
    assert adaptive_simpson(math.cos, 1.0, 0.0) == pytest.approx(-math.sin(1.0), abs=1e-10)
    assert adaptive_simpson(math.cos, 0.5, 0.5) == 0.0


@given(st.floats(0.1, 0.9))
def test_kink_breakpoint(k):
    f = lambda x: abs(x - k)
    exact = (k * k + (1 - k) ** 2) / 2
    assert adaptive_simpson(f, 0.0, 1.0, tol=1e-12, breakpoints=[k]) == pytest.approx(exact, abs=1e-12)


def test_failure_reported():
    with pytest.raises(LabError) as err:
        adaptive_simpson(lambda x: 1.0 / x if x else math.inf, 0.0, 1.0)
    assert err.value.code == "QUADRATURE_FAILED"


def test_richardson_change_small():
    assert richardson_change(math.exp, 0.0, 1.0, panels=16) < 1e-7
    assert composite_simpson(lambda x: x ** 3, 0.0, 2.0, 1) == pytest.approx(4.0, rel=1e-15)

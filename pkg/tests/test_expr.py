import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyhj.errors import ConfigError
from levyhj.expr import Expression


def test_power_operator():
    assert Expression("2^3 + 1").scalar() == 9.0


@pytest.mark.parametrize("src,expected", [
    ("abs(-2) + min(1, 3) + max(1, 3)", 6.0),
    ("exp(0) + log(e)", 2.0),
    ("cos(0) - sin(0)", 1.0),
    ("-pi + pi", 0.0),
])
def test_whitelisted_functions(src, expected):
    assert Expression(src).scalar() == pytest.approx(expected)


def test_vector_broadcast_against_norm():
    z = np.array([[3.0, 4.0], [1.0, 0.0]])
    out = Expression("norm(z) * z").vector(2, z=z)
    np.testing.assert_allclose(out, [[15.0, 20.0], [1.0, 0.0]])


def test_component_subscript():
    xi = np.array([[0.5, -1.0]])
    assert Expression("xi[1]").scalar(xi=xi)[0] == -1.0


def test_params_are_substituted():
    assert Expression("a * z", params={"a": 2.5}).scalar(z=np.array([2.0])) == pytest.approx(5.0)


@pytest.mark.parametrize("src", ["__import__('os')", "x.real", "lambda: 1", "open('f')",
                                 "[1, 2]", "1 if x else 2"])
def test_rejects_anything_outside_the_grammar(src):
    with pytest.raises(ConfigError):
        Expression(src)


def test_unknown_name_and_missing_variable():
    with pytest.raises(ConfigError):
        Expression("q + 1")
    with pytest.raises(ConfigError):
        Expression("z + 1").scalar()


def test_uses_tracks_variables():
    e = Expression("sin(norm(xi)) * z")
    assert e.uses("xi") and e.uses("z") and not e.uses("x")


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_arithmetic_matches_python(a, b):
    got = Expression("a * b - a / (1 + b^2) + abs(a)", params={"a": a, "b": b}).scalar()
    assert got == pytest.approx(a * b - a / (1 + b * b) + abs(a), rel=1e-12, abs=1e-12)
    assert math.isfinite(got)

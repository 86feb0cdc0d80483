import numpy as np
import pytest
from hypothesis import given, strategies as st

from osllab.expr import Expression, ExpressionError

X = np.array([[-2.0], [-0.5], [0.0], [0.5], [2.0]])


@pytest.mark.parametrize("text,expected", [
    ("|x|", [2, 0.5, 0, 0.5, 2]),
    ("-2^2", [-4] * 5),
    ("2^3^2", [512] * 5),
    ("x^3", [-8, -0.125, 0, 0.125, 8]),
    ("sgn(x)*pos(|x|-1)", [-1, 0, 0, 0, 1]),
    ("ind(x, -0.5, 0.5)", [0, 1, 1, 1, 0]),
    ("max(x, 0) - min(x, 0)", [2, 0.5, 0, 0.5, 2]),
    ("sqrt(|x|)*sqrt(|x|)", [2, 0.5, 0, 0.5, 2]),
    ("exp(0)", [1] * 5),
    ("1e-1*x + .5", [0.3, 0.45, 0.5, 0.55, 0.7]),
    ("(1 - x^2)/2", [-1.5, 0.375, 0.5, 0.375, -1.5]),
])
def test_values(text, expected):
    np.testing.assert_allclose(Expression(text)(X), expected)


def test_time_and_pi():
    e = Expression("pi*t + x")
    np.testing.assert_allclose(e(X, 2.0), X[:, 0] + 2 * np.pi)


def test_coordinates_in_two_dimensions():
    e = Expression("x1 - 2*x2", dim=2)
    np.testing.assert_allclose(e(np.array([[1.0, 1.0], [0.0, -1.0]])), [-1.0, 2.0])


def test_fractional_power_of_negative_is_nan():
    v = Expression("x^0.5")(X)
    assert np.isnan(v[0]) and v[4] == pytest.approx(np.sqrt(2))


@pytest.mark.parametrize("text,column", [
    ("x+", 3), ("foo(x)", 1), ("y", 1), ("min(x)", 1), ("|x", 3), ("x2", 1), ("3 4", 3), ("x $ 1", 3),
    ("", 1),
])
def test_errors_report_columns(text, column):
    with pytest.raises(ExpressionError) as info:
        Expression(text)
    assert info.value.position + 1 == column
    assert f"column {column}" in str(info.value)


def test_no_python_evaluation():
    with pytest.raises(ExpressionError):
        Expression("__import__('os')")


@given(a=st.floats(-10, 10), b=st.floats(-10, 10))
def test_arithmetic_agrees_with_python(a, b):
    e = Expression(f"({a!r})*x - ({b!r})")
    assert e(np.array([[1.5]]))[0] == pytest.approx(a * 1.5 - b)

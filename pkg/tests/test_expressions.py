import numpy as np
import pytest

from movingflow.expressions import ExpressionError, parse_expression


def test_arithmetic_and_precedence():
    e = parse_expression("1 + 2*3^2 - 4/8", ("x1",))
    assert e() == 1 + 2 * 9 - 0.5


def test_power_right_associative():
    e = parse_expression("2^3^2", ("x1",))
    assert e() == 2 ** 9


def test_unary_minus_and_functions():
    e = parse_expression("-sin(pi/2) + exp(0) + sqrt(4)", ("x1",))
    assert abs(e() - 2.0) < 1e-15


def test_vectorized_evaluation():
    e = parse_expression("x1^2 + t", ("x1", "t"))
    x = np.linspace(0, 1, 5)
    assert np.allclose(e(x1=x, t=2.0), x ** 2 + 2.0)


def test_syntax_error_reports_position():
    with pytest.raises(ExpressionError) as err:
        parse_expression("x1 + * 2", ("x1",))
    assert "position" in str(err.value)


def test_unknown_identifier():
    with pytest.raises(ExpressionError, match="unknown identifier"):
        parse_expression("x1 + y", ("x1",))


def test_unknown_function():
    with pytest.raises(ExpressionError, match="unknown function"):
        parse_expression("tanh(x1)", ("x1",))


def test_derivative_polynomial():
    e = parse_expression("x1^3 + 2*x1*t", ("x1", "t"))
    dx = e.derivative("x1")
    dt = e.derivative("t")
    assert abs(dx(x1=2.0, t=1.5) - (3 * 4 + 2 * 1.5)) < 1e-14
    assert abs(dt(x1=2.0, t=1.5) - 4.0) < 1e-14


def test_derivative_chain_rule():
    e = parse_expression("sin(x1^2)*exp(t)", ("x1", "t"))
    d = e.derivative("x1")
    x, t = 0.7, 0.3
    expected = 2 * x * np.cos(x ** 2) * np.exp(t)
    assert abs(d(x1=x, t=t) - expected) < 1e-14


def test_second_derivative_exact():
    e = parse_expression("exp(2*x1)*cos(x1)", ("x1",))
    d2 = e.derivative("x1").derivative("x1")
    x = 0.4
    expected = np.exp(2 * x) * (3 * np.cos(x) - 4 * np.sin(x))
    assert abs(d2(x1=x) - expected) < 1e-12


def test_derivative_general_power():
    e = parse_expression("x1^t", ("x1", "t"))
    d = e.derivative("t")
    assert abs(d(x1=2.0, t=3.0) - 8.0 * np.log(2.0)) < 1e-13


def test_derivative_matches_finite_differences():
    rng = np.random.default_rng(5)
    e = parse_expression("sin(x1*x2) + exp(x2/(1+x1^2)) - sqrt(x1+2)*t",
                         ("x1", "x2", "t"))
    for var in ("x1", "x2", "t"):
        d = e.derivative(var)
        for _ in range(20):
            env = {"x1": rng.uniform(0.1, 1), "x2": rng.uniform(0.1, 1),
                   "t": rng.uniform(0.1, 1)}
            h = 1e-6
            up = dict(env); up[var] += h
            dn = dict(env); dn[var] -= h
            fd = (e(**up) - e(**dn)) / (2 * h)
            assert abs(d(**env) - fd) < 1e-8

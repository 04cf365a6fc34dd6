import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import ConfigError
from expressions import CompiledExpression, variable_names


def test_tanh_well_drift_expression():
    f = CompiledExpression("-2*x/sqrt(1+x^2)")
    x = np.linspace(-5.0, 5.0, 11)
    np.testing.assert_allclose(f(x), -2.0 * x / np.sqrt(1.0 + x * x), rtol=1e-14)


def test_caret_and_double_star_are_powers():
    x = np.array([0.5, 2.0, 3.0])
    np.testing.assert_allclose(CompiledExpression("x^3")(x), x ** 3)
    np.testing.assert_allclose(CompiledExpression("x**3")(x), x ** 3)


def test_functions_and_builtin_constants():
    f = CompiledExpression("tanh(x) + exp(-abs(x)) + sin(pi*x) + cos(x) + log(e + x^2)")
    x = np.array([-1.5, 0.0, 0.7])
    expected = np.tanh(x) + np.exp(-np.abs(x)) + np.sin(np.pi * x) + np.cos(x) + np.log(np.e + x * x)
    np.testing.assert_allclose(f(x), expected, rtol=1e-12)


def test_user_constants():
    f = CompiledExpression("-a*x + b", constants={"a": 3.0, "b": 0.25})
    np.testing.assert_allclose(f(np.array([1.0, 2.0])), [-2.75, -5.75])


def test_multidimensional_variables():
    assert variable_names(1) == ["x"]
    assert variable_names(3) == ["x1", "x2", "x3"]
    f = CompiledExpression("x1*x2 - x", dim=2)
    states = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_allclose(f(states), [1.0, -6.0])


def test_constant_expression_broadcasts():
    out = CompiledExpression("0")(np.array([1.0, 2.0, 3.0]))
    assert out.shape == (3,)
    np.testing.assert_array_equal(out, 0.0)


@pytest.mark.parametrize(
    "text",
    ["foo(x)", "__import__('os')", "x % 2", "x == 1", "x +", "(x", "y + 1", "x[0]", "lambda: 1", "0x10"],
)
def test_rejected_expressions(text):
    with pytest.raises(ConfigError):
        CompiledExpression(text)


def test_constants_may_not_shadow_reserved_names():
    with pytest.raises(ConfigError):
        CompiledExpression("x", constants={"x": 1.0})
    with pytest.raises(ConfigError):
        CompiledExpression("x", constants={"tanh": 1.0})


def test_pickle_recompiles():
    f = CompiledExpression("-a*x/(1+x^2)", constants={"a": 2.0})
    g = pickle.loads(pickle.dumps(f))
    x = np.linspace(-3.0, 3.0, 7)
    np.testing.assert_array_equal(f(x), g(x))
    assert g.text == f.text


@given(
    a=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False),
    b=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False),
)
def test_affine_expressions_evaluate_exactly(a, b):
    f = CompiledExpression(f"({a!r})*x + ({b!r})")
    x = np.array([-2.0, 0.0, 1.5])
    np.testing.assert_allclose(f(x), a * x + b, rtol=1e-12, atol=1e-9)

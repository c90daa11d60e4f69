import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from dhgsil import diffcore as dc


def grad_of(fn, x):
    p = dc.parameter(x)
    return dc.gradient(fn(p), [p])[0]


def check_fd(fn, x, tol=1e-6):
    analytic = grad_of(fn, x)
    numeric = dc.numerical_gradient(lambda a: fn(dc.as_tensor(a)).item(), x)
    assert dc.max_relative_error(analytic, numeric) < tol


# ------------------------------------------------------------------ forward

def test_square_of_three():
    x = dc.as_tensor(3.0)
    assert (x * x).item() == 9.0


def test_exp_of_negative_zero_squared():
    x = dc.as_tensor(0.0)
    assert dc.exp(-(x * x)).item() == 1.0


def test_identity_matmul():
    out = dc.as_tensor([[1.0, 0.0], [0.0, 1.0]]) @ dc.as_tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(out.data, [[5, 6], [7, 8]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(dc.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        dc.as_tensor(np.ones((2, 3))) @ dc.as_tensor(np.ones((2, 3)))


def test_non_finite_value_raises():
    with pytest.raises(dc.NonFiniteError):
        dc.log(dc.as_tensor(0.0))


def test_softplus_is_stable_for_large_inputs():
    out = dc.softplus(dc.as_tensor([-800.0, 0.0, 800.0])).data
    np.testing.assert_allclose(out, [0.0, np.log(2.0), 800.0])


def test_tensor_data_is_read_only():
    t = dc.as_tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


# ---------------------------------------------------------------- gradients

def test_power_rule():
    assert grad_of(lambda x: x * x, 3.0) == 6.0


def test_gaussian_slope_at_origin():
    assert grad_of(lambda x: dc.exp(-(x * x)), 0.0) == 0.0


@pytest.mark.parametrize("x, expected", [(1.0, 0.0), (0.0, -1.0)])
def test_hinge_derivative(x, expected):
    fn = lambda t: dc.maximum(-t + 0.1, 0.0)
    assert grad_of(fn, x) == expected
    numeric = dc.numerical_gradient(lambda a: fn(dc.as_tensor(a)).item(), np.array(x))
    assert numeric == pytest.approx(expected, abs=1e-8)


def test_gradient_reuses_shared_node_once():
    p = dc.parameter(2.0)
    y = p * p
    z = y + y  # y appears twice; its backward must run only once
    stats = {}
    g = dc.gradient(z, [p], stats)[0]
    assert g == 8.0
    assert stats["visited"] == 3  # z, y, p


def test_unreached_parameter_gets_zero_gradient():
    a, b = dc.parameter([1.0, 2.0]), dc.parameter([3.0])
    ga, gb = dc.gradient(dc.tsum(a * a), [a, b])
    np.testing.assert_array_equal(ga, [2.0, 4.0])
    np.testing.assert_array_equal(gb, [0.0])


def test_gradient_requires_scalar():
    with pytest.raises(dc.ShapeError):
        dc.gradient(dc.parameter([1.0, 2.0]) * 2.0, [])


UNARY = {
    "exp": dc.exp,
    "log": lambda t: dc.log(t * t + 1.0),
    "sqrt": lambda t: dc.sqrt(t * t + 0.5),
    "tanh": dc.tanh,
    "softplus": dc.softplus,
    "square": dc.square,
    "neg": dc.neg,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4))
    check_fd(lambda t: dc.tsum(UNARY[name](t) * np.arange(12.0).reshape(3, 4)), x)


def test_broadcasting_binary_ops_match_finite_differences():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(3, 1, 4))
    b = rng.normal(size=(2, 4)) + 3.0
    check_fd(lambda t: dc.tsum((t + b) * b / (b - t * 0.1)), a)
    check_fd(lambda t: dc.tsum((a - t) * a / (t * t + 1.0)), b)


def test_batched_matmul_gradients():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(2, 3, 3))
    w = rng.normal(size=(3, 2))
    check_fd(lambda t: dc.tsum(dc.tanh(m @ t)), w)
    check_fd(lambda t: dc.tsum(dc.tanh(t @ w)), m)


def test_norm_and_reductions():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 3))
    check_fd(lambda t: dc.tsum(dc.norm(t, axis=(-2, -1))), x)
    check_fd(lambda t: dc.tsum(dc.mean(t * t, axis=1)), x)
    assert grad_of(lambda t: dc.tsum(dc.norm(t)), np.zeros(3)).tolist() == [0.0, 0.0, 0.0]


def test_shape_ops_and_indexing():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3))
    idx = np.array([[0, 1], [1, 3], [3, 3]])
    check_fd(lambda t: dc.tsum(dc.square(t[idx])), x)  # repeated rows accumulate
    check_fd(lambda t: dc.tsum(dc.square(t[1:, ::2])), x)
    check_fd(lambda t: dc.tsum(dc.exp(t.T.reshape((2, 6))) * np.arange(12.0).reshape(2, 6)), x)
    check_fd(lambda t: dc.tsum(dc.square(dc.concat([t, t * 2.0], axis=1))), x)
    check_fd(lambda t: dc.tsum(dc.square(dc.stack([t, t[::-1]], axis=0))), x)
    check_fd(lambda t: dc.tsum(dc.square(dc.transpose(t.reshape((2, 2, 3)), (2, 0, 1))) * 1.5), x)


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (3, 2), elements=st.floats(-2, 2)))
def test_composite_expression_gradients(x):
    w = np.array([[0.3, -1.2, 0.5], [0.8, 0.1, -0.4]])
    check_fd(lambda t: dc.tsum(dc.softplus(t @ w) * dc.tanh(t @ w)), x, tol=1e-5)


# --------------------------------------------------------------------- adam

def test_zero_gradient_leaves_parameters_unchanged():
    params = {"w": np.array([1.0, -2.0])}
    new, _ = dc.adam_step(params, {"w": np.zeros(2)}, dc.OptimizerState())
    np.testing.assert_array_equal(new["w"], params["w"])


def test_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, 1.0, 1.0])}
    grads = {"w": np.array([0.5, -3.0, 1e-3])}
    new, state = dc.adam_step(params, grads, dc.OptimizerState(lr=0.001))
    np.testing.assert_allclose(new["w"] - params["w"], -0.001 * np.sign(grads["w"]), rtol=1e-4)
    assert state.step == 1


def test_two_steps_reduce_a_quadratic():
    params = {"x": np.array([2.0])}
    state = dc.OptimizerState(lr=0.001)
    before = float(params["x"][0] ** 2)
    for _ in range(2):
        params, state = dc.adam_step(params, {"x": 2 * params["x"]}, state)
    assert float(params["x"][0] ** 2) < before


def test_adam_shape_mismatch():
    with pytest.raises(dc.ShapeError):
        dc.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, dc.OptimizerState())


def test_adam_missing_gradient():
    with pytest.raises(KeyError):
        dc.adam_step({"w": np.zeros(2)}, {}, dc.OptimizerState())

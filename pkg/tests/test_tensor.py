import math

import numpy as np
import pytest

from hypercomplete import tensor as T
from hypercomplete.nn import (MLP, LayerNorm, Linear, Rng, depthwise_conv1d, layer_norm, linear,
                              max_pool_rows, parameter)
from hypercomplete.oracles import gradcheck
from hypercomplete.tensor import DimensionError, GraphError, Tensor

OP_TOL = 1e-4


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def _layer(w, b):
    layer = Linear(len(w[0]), len(w), Rng(0))
    layer.weight.data = np.array(w, dtype=float)
    layer.bias.data = np.array(b, dtype=float)
    return layer


# -- linear ------------------------------------------------------------------

def test_linear_basis_vector_picks_column():
    y = linear(Tensor([1.0, 0.0]), _layer([[2, 3], [4, 5]], [0, 0]))
    np.testing.assert_array_equal(y.data, [2, 4])


def test_linear_zero_input_returns_bias():
    y = linear(Tensor([0.0, 0.0]), _layer([[2, 3], [4, 5]], [7, 7]))
    np.testing.assert_array_equal(y.data, [7, 7])


def test_linear_hand_multiply():
    y = linear(Tensor([1.0, 1.0]), _layer([[1, 2], [3, 4]], [1, -1]))
    np.testing.assert_array_equal(y.data, [4, 6])


def test_linear_shape_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(3,\).*\(2, 2\)"):
        linear(Tensor([1.0, 2.0, 3.0]), _layer([[1, 2], [3, 4]], [0, 0]))


# -- layer norm ----------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    y = layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(y.data, [0, 0, 0])


def test_layer_norm_already_standard():
    y = layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-14)
    np.testing.assert_allclose(y.data, [1, -1], atol=1e-12)


def test_layer_norm_affine():
    y = layer_norm(Tensor([0.0, 2.0]), Tensor([2.0, 2.0]), Tensor([1.0, 1.0]), eps=1e-14)
    np.testing.assert_allclose(y.data, [-1, 3], atol=1e-12)


def test_layer_norm_empty_channels():
    with pytest.raises(DimensionError):
        layer_norm(Tensor(np.zeros((2, 0))), Tensor(np.zeros(0)), Tensor(np.zeros(0)))


def test_layer_norm_row_statistics(rng):
    x = Tensor(rng.normal(3.0, 5.0, (20, 16)))
    eps = 1e-5
    y = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), eps).data
    assert np.abs(y.mean(axis=1)).max() < 1e-9
    var = x.data.var(axis=1)
    np.testing.assert_allclose(y.var(axis=1), var / (var + eps), rtol=1e-12)


# -- activations, conv, pooling ------------------------------------------------------

def test_silu_values():
    y = T.silu(Tensor([0.0, 1.0, 40.0])).data
    assert y[0] == 0
    assert y[1] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)
    assert y[1] == pytest.approx(0.7311, abs=1e-4)
    assert y[2] == pytest.approx(40.0, rel=1e-15)


def test_silu_extreme_inputs_stay_finite():
    y = T.silu(Tensor([-1000.0, 1000.0]))
    assert np.all(np.isfinite(y.data))


def test_dwconv_identity_kernel(rng):
    x = rng.normal(size=(9, 3))
    k = np.zeros((3, 4))
    k[:, -1] = 1.0
    np.testing.assert_array_equal(depthwise_conv1d(Tensor(x), Tensor(k)).data, x)
    np.testing.assert_array_equal(depthwise_conv1d(Tensor(x), Tensor(np.ones((3, 1)))).data, x)


def test_dwconv_unrolled_by_hand():
    a, b = 0.3, 0.7
    y = depthwise_conv1d(Tensor([[1.0], [0.0], [0.0], [0.0]]), Tensor([[a, b]]))
    np.testing.assert_allclose(y.data.ravel(), [b, a, 0, 0])


def test_dwconv_zero_in_zero_out(rng):
    y = depthwise_conv1d(Tensor(np.zeros((5, 2))), Tensor(rng.normal(size=(2, 3))))
    assert not y.data.any()


def test_dwconv_channel_mismatch():
    with pytest.raises(DimensionError):
        depthwise_conv1d(Tensor(np.zeros((5, 2))), Tensor(np.zeros((3, 2))))


def test_max_pool_rows_examples():
    np.testing.assert_array_equal(max_pool_rows(Tensor([[1.0, 5.0], [3.0, 2.0]])).data, [3, 5])
    np.testing.assert_array_equal(max_pool_rows(Tensor([[4.0, -1.0]])).data, [4, -1])


def test_max_pool_ties_route_to_first_row():
    x = parameter([[2.0, 2.0], [2.0, 2.0]])
    y = max_pool_rows(x)
    np.testing.assert_array_equal(y.data, [2, 2])
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, [[1, 1], [0, 0]])


def test_max_pool_empty():
    with pytest.raises(ValueError):
        max_pool_rows(Tensor(np.zeros((0, 3))))


# -- backward contract -----------------------------------------------------------

def test_backward_sum():
    x = parameter([1.0, 2.0, 3.0])
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_backward_square():
    x = parameter([1.0, 2.0])
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_backward_twice_is_an_error():
    x = parameter([1.0, 2.0])
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_backward_needs_scalar():
    x = parameter([1.0, 2.0])
    with pytest.raises(GraphError):
        (x * 2.0).backward()


def test_shared_subexpression_accumulates():
    x = parameter([3.0])
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_array_equal(x.grad, [12.0])


def test_no_grad_records_nothing():
    x = parameter([1.0])
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


# -- finite-difference checks for every differentiable op ----------------------

def _p(rng, *shape, positive=False):
    data = rng.normal(size=shape)
    return parameter(np.abs(data) + 0.5 if positive else data)


OPS = {
    "add": lambda r: ((a := _p(r, 3, 4)), (b := _p(r, 4)), lambda: ((a + b) * (a + b)).sum()),
    "sub": lambda r: ((a := _p(r, 3, 4)), (b := _p(r, 3, 1)), lambda: ((a - b) ** 3).sum()),
    "mul": lambda r: ((a := _p(r, 2, 3)), (b := _p(r, 2, 3)), lambda: (a * b * a).sum()),
    "div": lambda r: ((a := _p(r, 5)), (b := _p(r, 5, positive=True)), lambda: (a / b).sum()),
    "matmul": lambda r: ((a := _p(r, 3, 4)), (b := _p(r, 4, 2)), lambda: T.tanh(a @ b).sum()),
    "bmatmul": lambda r: ((a := _p(r, 2, 3, 4)), (b := _p(r, 4, 5)), lambda: T.tanh(a @ b).sum()),
    "exp_log": lambda r: ((a := _p(r, 4, positive=True)), lambda: (T.log(a) * T.exp(a)).sum()),
    "sqrt": lambda r: ((a := _p(r, 4, positive=True)), lambda: T.sqrt(a).sum()),
    "sigmoid": lambda r: ((a := _p(r, 6)), lambda: (T.sigmoid(a) * a).sum()),
    "silu": lambda r: ((a := _p(r, 6)), lambda: (T.silu(a) ** 2).sum()),
    "softplus": lambda r: ((a := _p(r, 6)), lambda: (T.softplus(a) ** 2).sum()),
    "softmax": lambda r: ((a := _p(r, 3, 5)), (w := Tensor(r.normal(size=(3, 5)))),
                          lambda: (T.softmax(a, axis=1) * w).sum()),
    "mean": lambda r: ((a := _p(r, 3, 5)), lambda: (T.mean(a, axis=0) ** 2).sum()),
    "max": lambda r: ((a := _p(r, 4, 3, 2)), lambda: (T.max_along(a, 1) ** 2).sum()),
    "reshape_T": lambda r: ((a := _p(r, 2, 6)), (w := Tensor(r.normal(size=(3,)))),
                            lambda: (T.tanh(a.reshape(3, 4).T @ w)).sum()),
    "take": lambda r: ((a := _p(r, 5, 3)), lambda: (T.take(a, np.array([0, 2, 2, 4])) ** 2).sum()),
    "concat": lambda r: ((a := _p(r, 2, 3)), (b := _p(r, 4, 3)), lambda: (T.concat([a, b]) ** 3).sum()),
    "broadcast": lambda r: ((a := _p(r, 1, 3)), (w := Tensor(r.normal(size=(4, 3)))),
                            lambda: (T.broadcast_to(a, (4, 3)) ** 2 * w).sum()),
    "row_norm": lambda r: ((a := _p(r, 5, 3)), lambda: T.row_norm(a, axis=1).sum()),
    "linear": lambda r: ((lin := Linear(4, 3, Rng(1))), (x := _p(r, 5, 4)), lin.weight, lin.bias,
                         lambda: T.tanh(linear(x, lin)).sum()),
    "layer_norm": lambda r: ((ln := LayerNorm(6)), (x := _p(r, 4, 6)), ln.gain, ln.shift,
                             (w := Tensor(r.normal(size=(4, 6)))),
                             lambda: (ln(x) * w).sum()),
    "dwconv": lambda r: ((x := _p(r, 7, 3)), (k := _p(r, 3, 4)),
                         lambda: (depthwise_conv1d(x, k) ** 2).sum()),
    "max_pool_rows": lambda r: ((x := _p(r, 6, 4)), lambda: (max_pool_rows(x) ** 2).sum()),
    "mlp": lambda r: ((m := MLP([3, 5, 2], Rng(2))), (x := _p(r, 4, 3)),
                      lambda: (m(x) ** 2).sum()),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradients_match_finite_differences(name, rng):
    items = OPS[name](rng)
    fn = items[-1]
    tensors = [t for t in items[:-1] if isinstance(t, Tensor) and t.requires_grad]
    # Linear/MLP/LayerNorm builders put their module first; pick up its params too
    for obj in items[:-1]:
        if hasattr(obj, "parameters"):
            tensors += [p for p in obj.parameters() if all(p is not q for q in tensors)]
    assert gradcheck(fn, tensors, eps=1e-5) < OP_TOL


def test_ops_keep_finite_values(rng):
    x = Tensor(rng.normal(size=(8, 5)) * 50)
    ln = LayerNorm(5)
    out = T.softmax(T.silu(ln(x)), axis=1)
    assert np.all(np.isfinite(out.data))


def test_rng_is_deterministic():
    a, b = Rng(123), Rng(123)
    np.testing.assert_array_equal(a.uniform(-1, 1, (4, 4)), b.uniform(-1, 1, (4, 4)))
    np.testing.assert_array_equal(a.normal((3,)), b.normal((3,)))
    assert not np.array_equal(Rng(1).normal((3,)), Rng(2).normal((3,)))


def test_linear_init_bounds():
    lin = Linear(16, 8, Rng(0))
    assert np.abs(lin.weight.data).max() <= 0.25
    assert np.array_equal(Linear(16, 8, Rng(0)).weight.data, lin.weight.data)

import numpy as np
import pytest

from trimodal import autodiff as ad
from trimodal.autodiff import Tensor
from trimodal.errors import ContractError, ShapeError, ValidationError
from trimodal.layers import gelu, layer_norm, softplus

from conftest import finite_difference

RNG = np.random.default_rng(1234)


def scalar_through(op_result, weights):
    return (op_result * Tensor(weights)).sum()


def test_matmul_identity():
    eye = Tensor(np.eye(3))
    b = Tensor(RNG.normal(size=(3, 4)))
    assert np.array_equal(ad.matmul(eye, b).data, b.data)


def test_matmul_hand_example():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = Tensor(np.array([[1.0], [1.0]]))
    assert np.array_equal(ad.matmul(a, b).data, np.array([[3.0], [7.0]]))


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(4, 5\).*\(3, 2\)"):
        ad.matmul(Tensor(np.zeros((4, 5))), Tensor(np.zeros((3, 2))))


def test_matmul_gradient_matches_finite_differences():
    a = Tensor(RNG.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(RNG.normal(size=(5, 2)), requires_grad=True)
    w = RNG.normal(size=(4, 2))
    loss_fn = lambda: scalar_through(ad.matmul(a, b), w)
    loss_fn().backward()
    for p in (a, b):
        for _ in range(6):
            idx = np.unravel_index(int(RNG.integers(p.data.size)), p.data.shape)
            fd = finite_difference(loss_fn, p, idx, h=1e-6)
            rel = abs(fd - p.grad[idx]) / max(abs(fd), 1e-9)
            assert rel < 1e-6


def test_softmax_uniform_and_stability():
    assert np.allclose(ad.softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3)
    big = ad.softmax(Tensor(np.array([1000.0, 0.0]))).data
    assert np.all(np.isfinite(big))
    assert big[0] > 0.999999 and abs(big.sum() - 1.0) < 1e-12


def test_softmax_rows_sum_to_one():
    x = Tensor(RNG.normal(size=(5, 9)) * 10)
    s = ad.softmax(x, axis=-1)
    assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all((s.data > 0) & (s.data < 1))


def test_softmax_jvp_vs_finite_differences():
    x = Tensor(RNG.normal(size=7), requires_grad=True)
    w = RNG.normal(size=7)
    loss_fn = lambda: scalar_through(ad.softmax(x, axis=-1), w)
    loss_fn().backward()
    for i in range(7):
        fd = finite_difference(loss_fn, x, (i,), h=1e-6)
        rel = abs(fd - x.grad[i]) / max(abs(fd), abs(x.grad[i]), 1e-9)
        assert rel < 1e-6


def test_softmax_invalid_axis():
    with pytest.raises(ValidationError):
        ad.softmax(Tensor(np.zeros((2, 2))), axis=5)


def test_layer_norm_constant_row_is_zeros():
    g = Tensor(np.ones(6))
    b = Tensor(np.zeros(6))
    y = layer_norm(Tensor(np.full((2, 6), 3.7)), g, b)
    assert np.allclose(y.data, 0.0)


def test_layer_norm_already_normalized_row():
    g = Tensor(np.ones(2))
    b = Tensor(np.zeros(2))
    y = layer_norm(Tensor(np.array([[1.0, -1.0]])), g, b)
    assert np.allclose(y.data, [[1.0, -1.0]], atol=1e-4)


def test_layer_norm_statistics():
    x = Tensor(RNG.normal(size=(4, 16)) * 3 + 1)
    y = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
    assert np.allclose(y.data.mean(axis=-1), 0.0, atol=1e-5)
    assert np.allclose(y.data.var(axis=-1), 1.0, atol=1e-4)


def test_layer_norm_gradients():
    x = Tensor(RNG.normal(size=(3, 8)), requires_grad=True)
    g = Tensor(RNG.normal(size=8), requires_grad=True)
    b = Tensor(RNG.normal(size=8), requires_grad=True)
    w = RNG.normal(size=(3, 8))
    loss_fn = lambda: scalar_through(layer_norm(x, g, b), w)
    for p in (x, g, b):
        p.zero_grad()
    loss_fn().backward()
    for p in (x, g, b):
        for _ in range(5):
            idx = np.unravel_index(int(RNG.integers(p.data.size)), p.data.shape)
            fd = finite_difference(loss_fn, p, idx)
            rel = abs(fd - p.grad[idx]) / max(abs(fd), abs(p.grad[idx]), 1e-9)
            assert rel < 1e-5


def test_backward_sum_gives_ones():
    x = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_elementwise_square():
    x = Tensor(RNG.normal(size=5), requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_rejects_non_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_backward_accumulates_additively():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    assert np.array_equal(x.grad, 2 * first)


def test_unreachable_leaf_holds_zero():
    x = Tensor(np.ones(3), requires_grad=True)
    y = Tensor(np.ones(3), requires_grad=True)
    (x * 2.0).sum().backward()
    assert np.array_equal(y.grad, np.zeros(3))
    assert np.array_equal(x.grad, np.full(3, 2.0))


@pytest.mark.parametrize("op_name", ["add", "mul", "div", "sub", "exp", "log", "log1p",
                                     "tanh", "abs", "relu", "sigmoid", "pow", "gelu",
                                     "softplus", "log_softmax", "gather", "concat",
                                     "narrow", "transpose", "reshape", "mean"])
def test_each_op_gradient_vs_finite_differences(op_name):
    rng = np.random.default_rng(hash(op_name) % 2**32)
    a = Tensor(rng.normal(size=(3, 5)) + 2.5, requires_grad=True)  # shift keeps log/relu off kinks
    b = Tensor(rng.normal(size=(3, 5)) + 2.5, requires_grad=True)
    w = rng.normal(size=(3, 5))

    builders = {
        "add": lambda: a + b,
        "mul": lambda: a * b,
        "div": lambda: a / b,
        "sub": lambda: a - b,
        "exp": lambda: ad.exp(a * 0.3),
        "log": lambda: ad.log(a),
        "log1p": lambda: ad.log1p(a),
        "tanh": lambda: ad.tanh(a),
        "abs": lambda: ad.absolute(a),
        "relu": lambda: ad.relu(a),
        "sigmoid": lambda: ad.sigmoid(a),
        "pow": lambda: a ** 1.7,
        "gelu": lambda: gelu(a),
        "softplus": lambda: softplus(a),
        "log_softmax": lambda: ad.log_softmax(a, axis=-1),
        "gather": lambda: ad.gather_rows(a, np.array([2, 0, 2])),
        "concat": lambda: ad.concat([a, b], axis=1),
        "narrow": lambda: ad.narrow(a, 1, 1, 3),
        "transpose": lambda: a.T,
        "reshape": lambda: a.reshape(5, 3),
        "mean": lambda: a.mean(axis=0, keepdims=True),
    }
    build = builders[op_name]
    out_shape = build().data.shape
    wout = rng.normal(size=out_shape)
    loss_fn = lambda: (build() * Tensor(wout)).sum()
    for p in (a, b):
        p.zero_grad()
    loss_fn().backward()
    for p in (a, b):
        if not p.grad.any():
            continue
        for _ in range(5):
            idx = np.unravel_index(int(rng.integers(p.data.size)), p.data.shape)
            fd = finite_difference(loss_fn, p, idx)
            err = abs(fd - p.grad[idx])
            rel = err / max(abs(fd), abs(p.grad[idx]), 1e-12)
            assert err < 1e-8 or rel < 1e-4, f"{op_name} at {idx}: fd={fd} analytic={p.grad[idx]}"


def test_broadcasting_gradients():
    row = Tensor(RNG.normal(size=(1, 4)), requires_grad=True)
    mat = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
    w = RNG.normal(size=(3, 4))
    loss_fn = lambda: ((mat + row) * Tensor(w)).sum()
    loss_fn().backward()
    assert np.allclose(row.grad, w.sum(axis=0, keepdims=True))
    assert np.allclose(mat.grad, w)


def test_tensor_invariants():
    t = Tensor(np.zeros((2, 3)), requires_grad=True)
    assert t.grad.shape == t.data.shape
    assert t.data.size == 6
    with pytest.raises(ValidationError):
        ad.gather_rows(t, np.array([5]))

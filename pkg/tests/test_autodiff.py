"""Gradient engine: forward values against independent oracles, reverse-mode
gradients against central finite differences."""

import numpy as np
import pytest

from thermoden import autodiff as ad
from thermoden.autodiff import Tensor, backward, finite_difference_check
from thermoden.errors import ContractError, OracleError, ShapeError

# frozen with mpmath at 50 digits: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715 x^3)))
GELU_AT_1 = 0.8411919906082767
GELU_AT_MINUS_2 = -0.04540230591222498


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(Tensor(np.eye(2)), a)
    np.testing.assert_array_equal(out.values, a.values)


def test_matmul_dot_product():
    out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.item() == 11.0


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_matmul_gradient_matches_closed_form():
    rng = np.random.default_rng(7)
    a = Tensor(rng.normal(size=(5, 7)), requires_grad=True)
    b = Tensor(rng.normal(size=(7, 3)))
    grads = backward(ad.sum_all(ad.matmul(a, b)), [a])
    np.testing.assert_allclose(grads[a], np.ones((5, 3)) @ b.values.T, rtol=1e-12)


def test_matmul_gradient_vs_finite_differences():
    rng = np.random.default_rng(8)
    a = Tensor(rng.normal(size=(5, 7)), requires_grad=True)
    b = Tensor(rng.normal(size=(7, 3)))
    err = finite_difference_check(
        lambda: ad.sum_all(ad.hadamard(ad.matmul(a, b), ad.matmul(a, b))), [a])
    assert err < 1e-6


def test_gelu_fixed_points():
    assert ad.gelu(Tensor(0.0)).item() == 0.0
    assert ad.gelu(Tensor(1.0)).item() == pytest.approx(GELU_AT_1, abs=1e-15)
    assert ad.gelu(Tensor(-2.0)).item() == pytest.approx(GELU_AT_MINUS_2, abs=1e-15)


def test_relu_values():
    out = ad.relu(Tensor([[-3.0], [3.0]]))
    np.testing.assert_array_equal(out.values, [[0.0], [3.0]])


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_bias_broadcast_add_gradient():
    rng = np.random.default_rng(9)
    b = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    x = Tensor(rng.normal(size=(4, 6)))
    grads = backward(ad.sum_all(ad.add(x, b)), [b])
    np.testing.assert_allclose(grads[b], np.full((4, 1), 6.0), rtol=1e-14)


def test_row_softmax_uniform_rows():
    out = ad.row_softmax(Tensor([[0.0, 0.0], [1000.0, 1000.0]]))
    np.testing.assert_allclose(out.values, 0.5 * np.ones((2, 2)), atol=1e-15)


def test_row_softmax_closed_form():
    out = ad.row_softmax(Tensor([[0.0, np.log(3.0)]]))
    np.testing.assert_allclose(out.values, [[0.25, 0.75]], atol=1e-14)


def test_row_softmax_rows_sum_to_one_large_entries():
    rng = np.random.default_rng(10)
    for _ in range(20):
        a = rng.uniform(-1e3, 1e3, size=(6, 6))
        sums = ad.row_softmax(Tensor(a)).values.sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_backward_requires_scalar_loss():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        backward(ad.add(a, a), [a])


def test_backward_norm_squared():
    y = Tensor([[1.0], [-2.0], [3.0]], requires_grad=True)
    grads = backward(ad.sum_all(ad.hadamard(y, y)), [y])
    np.testing.assert_allclose(grads[y], 2.0 * y.values, rtol=1e-15)


def test_unreachable_leaf_gets_zero_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    grads = backward(ad.sum_all(ad.hadamard(a, a)), [a, b])
    assert grads[b].shape == (2, 2)
    np.testing.assert_array_equal(grads[b], 0.0)


def test_gradient_accumulates_across_reuse():
    w = Tensor([[2.0]], requires_grad=True)
    # w used twice: loss = w*w + 3w -> dloss/dw = 2w + 3 = 7
    loss = ad.add(ad.hadamard(w, w), ad.scale(w, 3.0))
    grads = backward(ad.sum_all(loss), [w])
    assert grads[w][0, 0] == pytest.approx(7.0, rel=1e-15)


def test_backward_is_linear_in_the_loss():
    rng = np.random.default_rng(11)
    w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(3, 2)))

    def l1():
        return ad.sum_all(ad.gelu(ad.matmul(w, x)))

    def l2():
        return ad.sum_all(ad.hadamard(ad.matmul(w, x), ad.matmul(w, x)))

    g1 = backward(l1(), [w])[w]
    g2 = backward(l2(), [w])[w]
    alpha, beta = 0.7, -1.3
    combined = ad.add(ad.scale(l1(), alpha), ad.scale(l2(), beta))
    g = backward(combined, [w])[w]
    np.testing.assert_allclose(g, alpha * g1 + beta * g2, rtol=1e-12, atol=1e-14)


def test_forward_determinism_bitwise():
    rng = np.random.default_rng(12)
    w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    x = Tensor(rng.normal(size=(4, 4)))

    def run():
        return ad.row_softmax(ad.gelu(ad.matmul(w, x))).values

    assert np.array_equal(run(), run())


def test_two_layer_gelu_network_gradcheck():
    rng = np.random.default_rng(13)
    w1 = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    b1 = Tensor(rng.normal(size=(6, 1)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(2, 6)), requires_grad=True)
    x = Tensor(rng.normal(size=(4, 3)))

    def loss():
        h = ad.gelu(ad.add(ad.matmul(w1, x), b1))
        out = ad.matmul(w2, h)
        return ad.sum_all(ad.hadamard(out, out))

    assert finite_difference_check(loss, [w1, b1, w2]) < 1e-4


@pytest.mark.parametrize("op", [ad.relu, ad.sigmoid, ad.exp, ad.gelu,
                                ad.row_softmax])
def test_unary_primitives_gradcheck_random_instances(op):
    rng = np.random.default_rng(14)
    for _ in range(50):
        w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        # keep relu inputs off the kink
        if op is ad.relu:
            w.values[np.abs(w.values) < 1e-2] += 0.05
        # random output weighting so constant-output ops (softmax row sums)
        # still have a nontrivial gradient to check
        c = Tensor(rng.normal(size=(3, 3)))
        err = finite_difference_check(lambda: ad.sum_all(ad.hadamard(op(w), c)), [w])
        assert err < 1e-4


def test_binary_primitives_gradcheck_random_instances():
    rng = np.random.default_rng(15)
    for _ in range(50):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        err = finite_difference_check(
            lambda: ad.sum_all(ad.hadamard(ad.add(a, b), ad.sub(a, b))), [a, b])
        assert err < 1e-4


def test_concat_rows_gradient_splits():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((4, 3)), requires_grad=True)
    out = ad.concat_rows([a, b])
    assert out.shape == (6, 3)
    grads = backward(ad.sum_all(ad.scale(out, 2.0)), [a, b])
    np.testing.assert_array_equal(grads[a], np.full((2, 3), 2.0))
    np.testing.assert_array_equal(grads[b], np.full((4, 3), 2.0))


def test_finite_difference_check_rejects_bad_step():
    w = Tensor([[1.0]], requires_grad=True)
    with pytest.raises(ContractError):
        finite_difference_check(lambda: ad.sum_all(w), [w], step=1.0)


def test_finite_difference_check_detects_nondeterminism():
    w = Tensor([[1.0]], requires_grad=True)
    state = {"calls": 0}

    def noisy():
        state["calls"] += 1
        return ad.scale(ad.sum_all(w), float(state["calls"]))

    with pytest.raises(OracleError):
        finite_difference_check(noisy, [w])


def test_finite_difference_quadratic_is_nearly_exact():
    rng = np.random.default_rng(16)
    w = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
    err = finite_difference_check(lambda: ad.sum_all(ad.hadamard(w, w)), [w])
    assert err < 1e-9


def test_no_grad_suppresses_graph():
    w = Tensor([[1.0]], requires_grad=True)
    with ad.no_grad():
        out = ad.scale(w, 2.0)
    assert not out.requires_grad
    grads = backward(ad.sum_all(ad.scale(w, 1.0)), [w])  # fresh graph still works
    assert grads[w][0, 0] == 1.0

import numpy as np
import pytest

from storexplain import autodiff as ad
from storexplain.autodiff import Tape, Tensor, backward, finite_diff_check, zero_grads
from storexplain.errors import ContractError


def test_relu_values():
    out = ad.relu(Tensor([[-1.0, 2.0]]))
    assert np.array_equal(out.data, [[0.0, 2.0]])


def test_sigmoid_symmetry_point():
    assert ad.sigmoid(Tensor([[0.0]])).item() == 0.5


def test_matmul_identity():
    m = np.array([[3.0, 4.0], [5.0, 6.0]])
    out = ad.matmul(Tensor(np.eye(2)), Tensor(m))
    assert np.array_equal(out.data, m)


def test_matmul_shape_error_mentions_both_shapes():
    with pytest.raises(ContractError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_add_row_broadcast():
    a = Tensor(np.ones((3, 2)))
    b = Tensor(np.array([[1.0, 2.0]]))
    assert np.array_equal(ad.add(a, b).data, [[2, 3], [2, 3], [2, 3]])


def test_add_broadcast_gradient_reduces_rows():
    b = Tensor(np.zeros((1, 2)), requires_grad=True)
    with Tape() as tape:
        out = ad.sum_all(ad.add(Tensor(np.ones((3, 2))), b))
    backward(tape, out)
    assert np.array_equal(b.grad, [[3.0, 3.0]])


def test_backward_sum_all_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(x)
    backward(tape, loss)
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_square_is_2x():
    vals = np.array([[1.0, -2.0, 3.0]])
    x = Tensor(vals, requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(x, x))
    backward(tape, loss)
    assert np.allclose(x.grad, 2 * vals)


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        out = ad.mul(x, x)
    with pytest.raises(ContractError, match="1x1"):
        backward(tape, out)


def test_backward_accumulates_across_calls():
    x = Tensor(np.ones((1, 3)), requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = ad.sum_all(x)
        backward(tape, loss)
    assert np.array_equal(x.grad, 2 * np.ones((1, 3)))
    zero_grads([x])
    assert np.array_equal(x.grad, np.zeros((1, 3)))


def test_tensor_reused_twice_gets_summed_gradient():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    with Tape() as tape:
        y = ad.add(ad.mul(x, x), x)  # x^2 + x -> grad 2x + 1
    backward(tape, y)
    assert np.allclose(x.grad, [[5.0]])


def test_log_softmax_rows_normalizes_to_machine_precision():
    rng = np.random.default_rng(1)
    out = ad.log_softmax_rows(Tensor(rng.normal(scale=10, size=(5, 7))))
    sums = np.exp(out.data).sum(axis=1)
    assert np.all(np.abs(sums - 1.0) < 1e-12)


def test_random_composite_matches_finite_differences(rng):
    w2 = rng.normal(size=(4, 3))
    w3 = rng.normal(size=(3, 1))

    def f(x):
        h1 = ad.relu(ad.matmul(x, Tensor(w2)))
        h2 = ad.sigmoid(ad.matmul(h1, Tensor(w3)))
        return ad.sum_all(ad.log_softmax_rows(ad.mul(h2, h2)))

    for _ in range(3):
        point = rng.normal(size=(2, 4)) + 0.1
        assert finite_diff_check(f, point, 1e-5) < 1e-4


def test_finite_diff_sum_of_squares():
    def f(x):
        return ad.sum_all(ad.mul(x, x))

    assert finite_diff_check(f, np.array([[1.0, 2.0, 3.0]]), 1e-5) < 1e-6


def test_finite_diff_constant_function():
    def f(x):
        return ad.sum_all(ad.mul(x, Tensor(np.zeros((1, 3)))))

    assert finite_diff_check(f, np.array([[1.0, 5.0, -2.0]]), 1e-5) == 0.0


def test_ops_without_tape_compute_values_only():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    out = ad.sum_all(ad.mul(x, x))  # no active tape
    assert out.item() == 4.0
    assert np.array_equal(x.grad, np.zeros((2, 2)))


def test_rsqrt_and_reshape_and_log_gradients(rng):
    def f(x):
        r = ad.rsqrt(ad.add(ad.mul(x, x), Tensor(np.ones((2, 3)))))
        lg = ad.log(ad.add(r, Tensor(np.ones((2, 3)))))
        return ad.sum_all(ad.reshape(lg, 3, 2))

    point = rng.normal(size=(2, 3))
    assert finite_diff_check(f, point, 1e-6) < 1e-4


def test_mean_rows_gradient():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.mean_rows(x))
    backward(tape, loss)
    assert np.allclose(x.grad, np.full((3, 2), 1 / 3))


def test_debug_finite_check_flag():
    ad.CHECK_FINITE = True
    try:
        with pytest.raises(FloatingPointError):
            ad.log(Tensor([[-1.0]]))
    finally:
        ad.CHECK_FINITE = False


def test_scalar_and_1d_inputs_become_matrices():
    assert Tensor(3.0).shape == (1, 1)
    assert Tensor([1.0, 2.0]).shape == (1, 2)
    with pytest.raises(ContractError):
        Tensor(np.zeros((2, 2, 2)))

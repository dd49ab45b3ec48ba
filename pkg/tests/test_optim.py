import numpy as np
import pytest

from storexplain.autodiff import Tensor
from storexplain.errors import ContractError
from storexplain.optim import AdamState, adam_step


def test_zero_gradient_fresh_state_leaves_params_unchanged():
    p = Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    before = p.data.copy()
    adam_step({"p": p}, {"p": np.zeros((1, 2))}, AdamState(lr=1e-3))
    assert np.array_equal(p.data, before)


def test_first_step_moves_by_about_lr():
    p = Tensor(np.array([[0.5]]), requires_grad=True)
    adam_step({"p": p}, {"p": np.ones((1, 1))}, AdamState(lr=1e-3))
    # bias-corrected m_hat / (sqrt(v_hat) + eps) ~= 1 on the first step
    assert abs((0.5 - p.data[0, 0]) - 1e-3) < 1e-8


def test_decoupled_weight_decay_shrinks_multiplicatively():
    p = Tensor(np.array([[2.0]]), requires_grad=True)
    state = AdamState(lr=1e-3, weight_decay=5e-4)
    expected = 2.0
    for _ in range(3):
        adam_step({"p": p}, {"p": np.zeros((1, 1))}, state)
        expected *= 1.0 - 1e-3 * 5e-4
    assert abs(p.data[0, 0] - expected) < 1e-15


def test_adam_is_deterministic():
    def run():
        p = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        state = AdamState(lr=0.01)
        for step in range(5):
            adam_step({"p": p}, {"p": np.array([[0.1 * step, -0.2]])}, state)
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_shape_drift_raises():
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    state = AdamState()
    adam_step({"p": p}, {"p": np.ones((2, 2))}, state)
    with pytest.raises(ContractError, match="drifted"):
        adam_step({"p": p}, {"p": np.ones((1, 2))}, state)


def test_step_counter_increases():
    p = Tensor(np.ones((1, 1)), requires_grad=True)
    state = AdamState()
    for expected in (1, 2, 3):
        adam_step({"p": p}, {"p": np.ones((1, 1))}, state)
        assert state.step == expected

import numpy as np
import pytest

from gclrec import autodiff as ad
from gclrec.errors import ContractError
from gclrec.optim import AdamState, adam_step


def test_zero_gradient_leaves_params_unchanged():
    p = ad.parameter([[1.0, -2.0]])
    state = AdamState([p], weight_decay=0.0)
    p.grad = np.zeros((1, 2))
    adam_step(state)
    np.testing.assert_array_equal(p.data, [[1.0, -2.0]])


def test_first_step_moves_by_learning_rate():
    # with g=1 the bias-corrected moments are both 1, so the step is
    # -lr / (1 + eps)
    p = ad.parameter([[0.0]])
    state = AdamState([p], learning_rate=0.005, weight_decay=0.0)
    p.grad = np.ones((1, 1))
    adam_step(state)
    assert p.data[0, 0] == pytest.approx(-0.005, rel=1e-6)


def test_two_steps_decrease_convex_quadratic():
    p = ad.parameter([[3.0]])
    state = AdamState([p], learning_rate=0.05, weight_decay=0.0)

    def loss_value():
        return float(p.data[0, 0] ** 2)

    start = loss_value()
    for _ in range(2):
        with ad.Tape() as tape:
            loss = ad.squared_l2(p)
        ad.backward(tape, loss)
        adam_step(state)
    assert loss_value() < start


def test_missing_grad_is_contract_error():
    p = ad.parameter([[1.0]], name="w")
    state = AdamState([p])
    with pytest.raises(ContractError, match="missing grad"):
        adam_step(state)


def test_step_counter_increments_by_one():
    p = ad.parameter([[1.0]])
    state = AdamState([p])
    for want in (1, 2, 3):
        p.grad = np.ones((1, 1))
        adam_step(state)
        assert state.step_count == want


def test_grads_cleared_after_step():
    p = ad.parameter([[1.0]])
    state = AdamState([p])
    p.grad = np.ones((1, 1))
    adam_step(state)
    assert p.grad is None


def test_weight_decay_shrinks_weights_without_grad_signal():
    p = ad.parameter([[10.0]])
    state = AdamState([p], learning_rate=0.1, weight_decay=0.1)
    p.grad = np.zeros((1, 1))
    adam_step(state)
    assert 0 < p.data[0, 0] < 10.0


def test_non_trainable_param_rejected():
    with pytest.raises(ContractError):
        AdamState([ad.constant([[1.0]])])

import math

import numpy as np
import pytest

from relightkit.neural.autodiff import Tensor
from relightkit.neural.gradcheck import as_leaf, grad_check
from relightkit.neural.losses import LossShapeError, loss_bce, loss_l1_grad
from relightkit.neural.optim import Adam, AdamState, TrainingError, adam_step, lr_at


def test_bce_values():
    half = Tensor(np.full((1, 1, 4, 4), 0.5))
    assert np.isclose(loss_bce(half, np.ones((1, 1, 4, 4))).item(), math.log(2))
    # a saturated wrong prediction is capped by the clamp
    wrong = Tensor(np.zeros((1, 1, 2, 2)))
    assert np.isclose(loss_bce(wrong, np.ones((1, 1, 2, 2))).item(), -math.log(1e-7))
    assert np.isclose(-math.log(1e-7), 16.118, atol=1e-3)
    exact = Tensor(np.array([[[[1.0, 0.0]]]]))
    assert loss_bce(exact, exact.data).item() < 1e-6


def test_l1_grad_values():
    p = Tensor(np.zeros((1, 1, 3, 3)))
    t = np.ones((1, 1, 3, 3))
    assert np.isclose(loss_l1_grad(p, t).item(), 1.0)
    ramp = np.tile(np.arange(3.0), (3, 1))[None, None]
    # |d| mean = 1, x differences all 1, y differences 0
    assert np.isclose(loss_l1_grad(p, ramp, lambda_grad=1.0).item(), 1.0 + 1.0)
    assert np.isclose(loss_l1_grad(p, ramp, lambda_grad=0.5).item(), 1.0 + 0.5)
    assert loss_l1_grad(p, p.data).item() == 0


def test_loss_gradients():
    rng = np.random.default_rng(0)
    p = as_leaf(rng.uniform(0.1, 0.9, (2, 1, 4, 4)))
    y = (rng.random((2, 1, 4, 4)) > 0.5).astype(float)
    assert grad_check(lambda: loss_bce(p, y), [p], fd_step=1e-4) < 1e-4
    q = as_leaf(rng.standard_normal((2, 3, 4, 4)))
    t = rng.standard_normal((2, 3, 4, 4))
    assert grad_check(lambda: loss_l1_grad(q, t), [q], fd_step=1e-4) < 1e-4


def test_loss_shape_errors():
    with pytest.raises(LossShapeError):
        loss_bce(Tensor(np.zeros((1, 1, 2, 2))), np.zeros((1, 1, 2, 3)))
    with pytest.raises(LossShapeError):
        loss_l1_grad(Tensor(np.zeros((1, 3, 2, 2))), np.zeros((1, 1, 2, 2)))


def test_float32_stays_float32():
    p = Tensor(np.full((1, 1, 2, 2), 0.3, np.float32), requires_grad=True)
    assert loss_bce(p, np.ones((1, 1, 2, 2))).dtype == np.float32
    assert loss_l1_grad(p, np.ones((1, 1, 2, 2))).dtype == np.float32


def test_lr_schedule():
    assert [lr_at(e) for e in range(5)] == pytest.approx([5e-4, 5e-4, 5e-5, 5e-5, 5e-6])
    assert lr_at(3, 1.0, 0.5, 1) == 0.125


def test_adam_first_step():
    p = np.array([1.0, -2.0, 3.0])
    adam_step([p], [np.array([0.3, -5.0, 0.0])], AdamState(), lr=0.01)
    # bias correction makes the first step exactly lr * sign(g) (up to eps)
    assert np.allclose(p, [0.99, -1.99, 3.0], atol=1e-7)


def test_adam_minimizes_quadratic():
    x = as_leaf([3.0, -4.0])
    opt = Adam([x])
    for _ in range(2000):
        opt.zero_grad()
        ((x - 1.0) ** 2).sum().backward()
        opt.step(0.05)
    assert np.allclose(x.data, 1.0, atol=1e-3)


def test_adam_rejects_nan_before_update():
    p = np.array([1.0, 2.0])
    q = np.array([5.0])
    state = AdamState()
    with pytest.raises(TrainingError):
        adam_step([p, q], [np.array([0.1, 0.1]), np.array([np.nan])], state, lr=0.1)
    assert np.array_equal(p, [1.0, 2.0]) and state.t == 0

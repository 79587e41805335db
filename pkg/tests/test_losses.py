import numpy as np
import pytest

from trajmae import tensor as tn
from trajmae.training.losses import (
    EmptyMaskError,
    lattice_masked_huber,
    masked_huber_loss,
    winner_modes,
    wta_loss,
)
from trajmae.verify import masked_loss_suite


def test_huber_value_by_hand():
    pred = tn.Tensor(np.array([[0.5, 3.0]]), requires_grad=True)
    loss = masked_huber_loss(pred, np.zeros((1, 2)))
    assert float(loss.data) == pytest.approx((0.125 + 2.5) / 2)
    tn.backward(loss)
    np.testing.assert_allclose(pred.grad, [[0.25, 0.5]])


def test_empty_mask():
    with pytest.raises(EmptyMaskError):
        masked_huber_loss(tn.Tensor(np.zeros((0, 2))), np.zeros((0, 2)))


def test_lattice_loss_ignores_visible_slots(nprng):
    pred = tn.Tensor(nprng.normal(size=(3, 4, 2)), requires_grad=True)
    target = tn.Tensor(nprng.normal(size=(3, 4, 2)), requires_grad=True)
    masked = nprng.random((3, 4)) < 0.5
    masked[0, 0] = True
    tn.backward(lattice_masked_huber(pred, target, masked))
    assert np.all(target.grad[~masked] == 0.0) and np.all(pred.grad[~masked] == 0.0)


def test_masked_loss_suite_small():
    assert masked_loss_suite(n=10).passed


def test_winner_is_lowest_ego_ade():
    target = np.zeros((1, 2, 2, 2))
    offsets = np.zeros((1, 3, 2, 2, 2))
    offsets[0, 0, :, 0] = 2.0
    offsets[0, 1, :, 0] = 0.5
    offsets[0, 1, :, 1] = 9.0  # other agent error does not matter
    offsets[0, 2, :, 0] = 1.0
    fv = np.ones((1, 2, 2), bool)
    assert winner_modes(offsets, target, fv, np.array([0])).tolist() == [1]
    assert winner_modes(offsets, target, fv, np.array([1])).tolist() in ([0], [2])


def test_wta_gradient_only_reaches_winner(nprng):
    offsets = tn.Tensor(nprng.normal(size=(2, 3, 4, 2, 2)), requires_grad=True)
    logits = tn.Tensor(nprng.normal(size=(2, 3)), requires_grad=True)
    target = nprng.normal(size=(2, 4, 2, 2))
    fv = np.ones((2, 4, 2), bool)
    loss, win = wta_loss(offsets, logits, target, fv, np.array([0, 1]))
    tn.backward(loss)
    for b in range(2):
        for c in range(3):
            assert np.any(offsets.grad[b, c] != 0) == (c == win[b])
    # classification term: softmax minus one-hot, scaled by 0.1 / B
    p = np.exp(logits.data) / np.exp(logits.data).sum(1, keepdims=True)
    onehot = np.eye(3)[win]
    np.testing.assert_allclose(logits.grad, 0.1 * (p - onehot) / 2, atol=1e-15)

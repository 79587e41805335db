"""Reconstruction and forecasting objectives."""

import numpy as np

from .. import tensor as tn

HUBER_DELTA = 1.0
CLS_WEIGHT = 0.1


class EmptyMaskError(ValueError):
    pass


def masked_huber_loss(pred, target, delta=HUBER_DELTA):
    """Mean Huber penalty over every coordinate of the masked-slot predictions.

    Args:
        pred: Tensor (n, 2) predictions at masked slots.
        target: (n, 2) array or Tensor of true coordinates at the same slots.
    """
    if pred.shape[0] == 0:
        raise EmptyMaskError("masked_huber_loss: no masked slots")
    if tuple(pred.shape) != tuple(np.shape(target.data if isinstance(target, tn.Tensor) else target)):
        raise tn.ShapeError(f"masked_huber_loss: prediction {pred.shape} vs target {np.shape(target)}")
    return tn.tmean(tn.huber(pred - target, delta))


def lattice_masked_huber(pred, target, masked, delta=HUBER_DELTA):
    """Huber loss restricted to ``masked`` slots of full (..., 2) lattices."""
    masked = np.asarray(masked, dtype=bool)
    idx = np.nonzero(masked)
    return masked_huber_loss(tn.as_tensor(pred)[idx], tn.as_tensor(target)[idx], delta)


def winner_modes(offsets, target, fut_valid, ego):
    """Index of the mode with the smallest ego average displacement, per scene.

    Args:
        offsets: (B, c, T, M, 2) array.
        target: (B, T, M, 2) array.
        fut_valid: (B, T, M) bool.
        ego: (B,) ints.
    """
    b = offsets.shape[0]
    rows = np.arange(b)
    pe = offsets[rows, :, :, ego]  # (B, c, T, 2)
    te = target[rows, :, ego]  # (B, T, 2)
    ve = fut_valid[rows, :, ego].astype(np.float64)  # (B, T)
    err = np.linalg.norm(pe - te[:, None], axis=-1)  # (B, c, T)
    ade = (err * ve[:, None]).sum(axis=-1) / np.maximum(ve.sum(axis=-1), 1.0)[:, None]
    return np.argmin(ade, axis=1)


def wta_loss(offsets, logits, target, fut_valid, ego, delta=HUBER_DELTA, cls_weight=CLS_WEIGHT):
    """Winner-takes-all regression plus mode classification.

    Returns:
        (loss Tensor, winners array).
    """
    win = winner_modes(offsets.data, target, fut_valid, ego)
    b = offsets.shape[0]
    rows = np.arange(b)
    chosen = offsets[rows, win]  # (B, T, M, 2)
    sel = np.broadcast_to(fut_valid[..., None], chosen.shape)
    reg = tn.masked_mean(tn.huber(chosen - target, delta), sel)
    logp = tn.log_softmax(logits, axis=1)
    ce = tn.tmean(logp[rows, win]) * -1.0
    return reg + ce * cls_weight, win

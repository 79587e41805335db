"""Forecast fine-tuning with optional pre-trained encoders."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import metrics
from .. import model as mdl
from ..tensor import RngStream, adam_step, backward, no_grad
from .checkpoint import Checkpoint, copy_prefix
from .losses import CLS_WEIGHT, HUBER_DELTA, wta_loss
from .pretrain import NumericalAbort
from .schedule import LRSchedule, lr_at


@dataclass
class FinetuneConfig:
    lr0: float = 1e-3
    period: int = 300
    factor: float = 2.0
    horizon: int = 1500
    total_steps: int = 3000
    batch_size: int = 16
    steps_per_eval: int = 500
    cls_weight: float = CLS_WEIGHT
    delta: float = HUBER_DELTA
    seed: int = 0

    def lr_schedule(self):
        return LRSchedule(self.lr0, self.period, self.factor, self.horizon)


@dataclass
class FinetuneResult:
    store: object
    curve: list  # (step, lr, loss)
    reports: list  # (step, EvalReport)

    def checkpoint(self, model_cfg, fcfg):
        return Checkpoint(
            config={"model": asdict(model_cfg), "finetune": asdict(fcfg)},
            store=self.store,
            counters={"global_step": len(self.curve)},
            rng_states={},
        )


def future_offsets(batch):
    """Ground-truth future as offsets from each agent's last observed position, (B, T, M, 2)."""
    off = batch.fut - batch.last_obs[:, :, None, :]
    off = off.transpose(0, 2, 1, 3)
    return np.where(batch.fut_valid.transpose(0, 2, 1)[..., None], off, 0.0)


def init_finetune_params(model_cfg, seed, traj_ckpt=None, map_ckpt=None):
    store = mdl.init_params(model_cfg, seed, ("traj_enc", "map_enc", "fore"))
    if traj_ckpt is not None:
        copy_prefix(store, traj_ckpt.store, "traj_enc.")
    if map_ckpt is not None:
        copy_prefix(store, map_ckpt.store, "map_enc.")
    return store


def predict_positions(store, data, model_cfg, batch_size=64):
    """Absolute forecasts (N, c, T, M, 2) and mode probabilities (N, c)."""
    preds, probs = [], []
    with no_grad():
        for lo in range(0, len(data), batch_size):
            batch = data.take(np.arange(lo, min(lo + batch_size, len(data))))
            off, logits = mdl.predict(store, batch, model_cfg)
            preds.append(mdl.absolute_forecast(off.data, batch))
            z = logits.data - logits.data.max(axis=1, keepdims=True)
            e = np.exp(z)
            probs.append(e / e.sum(axis=1, keepdims=True))
    return np.concatenate(preds), np.concatenate(probs)


def evaluate_store(store, data, model_cfg, threshold=metrics.MISS_THRESHOLD, radius=metrics.COLLISION_RADIUS):
    preds, _ = predict_positions(store, data, model_cfg)
    truths = data.fut.transpose(0, 2, 1, 3)
    valids = data.fut_valid.transpose(0, 2, 1)
    return metrics.evaluate(preds, truths, valids, data.ego, threshold, radius)


def run_finetune(fcfg, model_cfg, train, val=None, traj_ckpt=None, map_ckpt=None, eval_fn=None):
    """Train the forecaster with winner-takes-all loss and the step-decay LR rule.

    Args:
        train, val: collated ``Batch`` objects.
        traj_ckpt, map_ckpt: optional pre-training Checkpoints whose encoder
            weights initialize the model.
        eval_fn: optional ``(store) -> EvalReport`` used at each validation point;
            defaults to metrics on ``val``.
    """
    if len(train) == 0:
        raise ValueError("fine-tuning dataset is empty")
    store = init_finetune_params(model_cfg, fcfg.seed, traj_ckpt, map_ckpt)
    rng = RngStream(fcfg.seed, "finetune/batch")
    sched = fcfg.lr_schedule()
    curve, reports = [], []
    n = len(train)
    for step in range(fcfg.total_steps):
        batch = train.take(rng.integers(0, n, fcfg.batch_size))
        off, logits = mdl.predict(store, batch, model_cfg)
        target = future_offsets(batch)
        loss, _ = wta_loss(
            off, logits, target, batch.fut_valid.transpose(0, 2, 1), batch.ego, fcfg.delta, fcfg.cls_weight
        )
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalAbort(step, "finetune", value)
        backward(loss)
        lr = lr_at(step, sched)
        adam_step(store, store.grads(), lr)
        store.zero_grad()
        curve.append((step, lr, value))
        if fcfg.steps_per_eval and (step + 1) % fcfg.steps_per_eval == 0:
            if eval_fn is not None:
                reports.append((step + 1, eval_fn(store)))
            elif val is not None:
                reports.append((step + 1, evaluate_store(store, val, model_cfg)[0]))
    return FinetuneResult(store, curve, reports)

"""Masked reconstruction pre-training over a stage plan."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import model as mdl
from ..masking import MAP_STRATEGIES, TRAJ_STRATEGIES, plan_map_mask, plan_traj_mask
from ..tensor import RngStream, adam_step, backward, no_grad
from .checkpoint import Checkpoint, save_checkpoint
from .losses import HUBER_DELTA, masked_huber_loss
from .schedule import JOINT_SEP, build_schedule, materialize_stage_sequence

log = logging.getLogger(__name__)

TRAJ_ORDER = ("S", "T", "ST")
MAP_ORDER = ("Po", "Pa", "B")


class NumericalAbort(RuntimeError):
    def __init__(self, step, strategy, value):
        super().__init__(f"non-finite loss {value} at step {step} (strategy {strategy})")
        self.step = step
        self.strategy = strategy


@dataclass
class PretrainConfig:
    mode: str = "continual-pretrain"
    order: tuple = TRAJ_ORDER
    N: int = 2000
    M_carry: int = 500
    ratios: dict = field(default_factory=dict)
    default_ratio: float = 0.6
    batch_size: int = 16
    lr: float = 1e-3
    delta: float = HUBER_DELTA
    seed: int = 0

    def ratio(self, strategy):
        return float(self.ratios.get(strategy, self.default_ratio))

    def to_dict(self):
        d = asdict(self)
        d["order"] = list(self.order)
        return d


def target_of(order):
    if all(s in TRAJ_STRATEGIES for s in order):
        return "traj"
    if all(s in MAP_STRATEGIES for s in order):
        return "map"
    raise ValueError(f"order {order} mixes trajectory and map strategies")


def parts_for(target):
    return ("traj_enc", "traj_dec") if target == "traj" else ("map_enc", "map_dec")


def build_masks(batch, strategy, ratio, rng, target):
    """Per-scene mask plans stacked onto the batch lattice."""
    if target == "traj":
        b, m, t = batch.hist_valid.shape
        masked = np.zeros((b, m, t), dtype=bool)
        for i in range(b):
            rows = np.flatnonzero(batch.hist_valid[i].any(axis=1))
            ego = int(np.flatnonzero(rows == batch.ego[i])[0])
            plan = plan_traj_mask(
                strategy, ratio, batch.hist_valid[i, rows], ego, rng, history=batch.hist[i, rows]
            )
            masked[i, rows] = plan.masked
        return masked
    b, lp, p = batch.map_pts.shape[:3]
    masked = np.zeros((b, lp, p), dtype=bool)
    for i in range(b):
        n = int(batch.map_valid[i].sum())
        masked[i, :n] = plan_map_mask(strategy, ratio, n, p, rng).masked
    return masked


def reconstruction_loss(store, batch, masked, cfg, target, delta=HUBER_DELTA):
    pred, tgt = mdl.reconstruct(store, batch, masked, cfg, target)
    return masked_huber_loss(pred, tgt, delta)


@dataclass
class PretrainState:
    store: object
    stage: int = 0
    stage_pos: int = 0
    global_step: int = 0
    batch_rng: RngStream = None
    mask_rng: RngStream = None


@dataclass
class PretrainResult:
    store: object
    records: list
    plan: object
    checkpoints: list
    finished: bool
    state: PretrainState


def _checkpoint(state, model_cfg, pcfg, target):
    return Checkpoint(
        config={"model": asdict(model_cfg), "pretrain": pcfg.to_dict(), "target": target},
        store=state.store,
        counters={"stage": state.stage, "stage_pos": state.stage_pos, "global_step": state.global_step},
        rng_states={"batch": state.batch_rng.get_state(), "mask": state.mask_rng.get_state()},
    )


def state_from_checkpoint(ckpt):
    c = ckpt.counters
    return PretrainState(
        store=ckpt.store,
        stage=int(c["stage"]),
        stage_pos=int(c["stage_pos"]),
        global_step=int(c["global_step"]),
        batch_rng=RngStream.from_state(ckpt.rng_states["batch"]),
        mask_rng=RngStream.from_state(ckpt.rng_states["mask"]),
    )


def run_pretrain(
    pcfg, model_cfg, data, out_dir=None, resume=None, stop_after=None, on_stage_end=None, on_masks=None
):
    """Run (or resume) a pre-training schedule.

    Args:
        pcfg: PretrainConfig.
        model_cfg: ModelConfig.
        data: collated training ``Batch`` covering the whole split.
        out_dir: when given, ``stage{k}.tmae`` is written after each stage.
        resume: a Checkpoint written by this function to continue from.
        stop_after: stop once this many global steps have run (for split runs).
        on_stage_end: callback ``(stage_index, store)``.
        on_masks: callback ``(global_step, strategy, masked)`` seeing every batch plan.

    Returns:
        PretrainResult; ``records`` holds ``(step, stage, strategy, loss)`` tuples.
    """
    if len(data) == 0:
        raise ValueError("pre-training dataset is empty")
    target = target_of(pcfg.order)
    plan = build_schedule(pcfg.mode, pcfg.order, pcfg.N, pcfg.M_carry)
    if resume is None:
        state = PretrainState(
            store=mdl.init_params(model_cfg, pcfg.seed, parts_for(target)),
            batch_rng=RngStream(pcfg.seed, "pretrain/batch"),
            mask_rng=RngStream(pcfg.seed, "pretrain/mask"),
        )
    else:
        state = state_from_checkpoint(resume)
    store = state.store
    records = []
    checkpoints = []
    n = len(data)
    while state.stage < plan.num_stages:
        seq = materialize_stage_sequence(plan, state.stage, RngStream(pcfg.seed, f"pretrain/schedule/{state.stage}"))
        while state.stage_pos < len(seq):
            if stop_after is not None and state.global_step >= stop_after:
                return PretrainResult(store, records, plan, checkpoints, False, state)
            strategies = seq[state.stage_pos].split(JOINT_SEP)
            batch = data.take(state.batch_rng.integers(0, n, pcfg.batch_size))
            total = None
            parts = []
            for strat in strategies:
                masked = build_masks(batch, strat, pcfg.ratio(strat), state.mask_rng, target)
                if on_masks is not None:
                    on_masks(state.global_step, strat, masked)
                loss = reconstruction_loss(store, batch, masked, model_cfg, target, pcfg.delta)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NumericalAbort(state.global_step, strat, value)
                parts.append((strat, value))
                total = loss if total is None else total + loss
            backward(total)
            adam_step(store, store.grads(), pcfg.lr)
            store.zero_grad()
            for strat, value in parts:
                records.append((state.global_step, state.stage, strat, value))
            state.global_step += 1
            state.stage_pos += 1
        finished_stage = state.stage
        state.stage += 1
        state.stage_pos = 0
        if out_dir is not None:
            path = f"{out_dir}/stage{finished_stage + 1}.tmae"
            save_checkpoint(path, _checkpoint(state, model_cfg, pcfg, target))
            checkpoints.append(path)
        if on_stage_end is not None:
            on_stage_end(finished_stage, store)
        log.info("stage %d done at step %d", finished_stage + 1, state.global_step)
    return PretrainResult(store, records, plan, checkpoints, True, state)


def checkpoint_of(result, model_cfg, pcfg):
    return _checkpoint(result.state, model_cfg, pcfg, target_of(pcfg.order))


def held_out_errors(store, data, model_cfg, strategy, ratio, seed, target="traj", batch_size=64, delta=HUBER_DELTA):
    """Masked-slot (mean Huber loss, RMSE) on ``data`` with fixed, seed-determined plans."""
    rng = RngStream(seed, f"eval/mask/{strategy}")
    sq = hub = 0.0
    count = 0
    with no_grad():
        for lo in range(0, len(data), batch_size):
            batch = data.take(np.arange(lo, min(lo + batch_size, len(data))))
            masked = build_masks(batch, strategy, ratio, rng, target)
            pred, tgt = mdl.reconstruct(store, batch, masked, model_cfg, target)
            r = np.abs(pred.data - tgt)
            sq += float((r**2).sum())
            hub += float(np.where(r <= delta, 0.5 * r**2, delta * (r - 0.5 * delta)).sum())
            count += tgt.shape[0]
    return hub / (2 * count), math.sqrt(sq / count)


def held_out_rmse(store, data, model_cfg, strategy, ratio, seed, target="traj", batch_size=64):
    """Masked-slot RMSE on ``data`` with fixed, seed-determined plans."""
    return held_out_errors(store, data, model_cfg, strategy, ratio, seed, target, batch_size)[1]

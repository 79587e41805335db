"""Objectives, schedules, checkpoints and the pre-training / fine-tuning loops."""

from .checkpoint import Checkpoint, CheckpointError, CheckpointMismatch, load_checkpoint, save_checkpoint
from .losses import lattice_masked_huber, masked_huber_loss, wta_loss
from .schedule import LRSchedule, StagePlan, build_schedule, lr_at, materialize_stage_sequence

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "CheckpointMismatch",
    "LRSchedule",
    "StagePlan",
    "build_schedule",
    "lattice_masked_huber",
    "load_checkpoint",
    "lr_at",
    "masked_huber_loss",
    "materialize_stage_sequence",
    "save_checkpoint",
    "wta_loss",
]

"""Motion forecasting metrics: single-agent, joint, miss rate and collisions.

Per-scene functions take

* ``pred``: (c, T, M, 2) absolute predicted positions for c modes,
* ``truth``: (T, M, 2) ground-truth future positions,
* ``valid``: (T, M) ground-truth validity.

Only ground-truth-valid slots participate.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

MISS_THRESHOLD = 2.0
COLLISION_RADIUS = 0.5

REPORT_KEYS = (
    "minADE",
    "minFDE",
    "MR",
    "minJointADE",
    "minJointFDE",
    "minJointMR",
    "crossCollisionRate",
    "egoCollisionRate",
    "consistentMinJointMR",
)


def _last_valid(valid_col):
    idx = np.flatnonzero(valid_col)
    return int(idx[-1]) if idx.size else -1


def _errors(pred, truth):
    return np.linalg.norm(pred - truth[None], axis=-1)  # (c, T, M)


def ego_ade_per_mode(pred, truth, valid, ego):
    v = valid[:, ego]
    if not v.any():
        return None
    return _errors(pred, truth)[:, v, ego].mean(axis=1)


def ego_fde_per_mode(pred, truth, valid, ego):
    t = _last_valid(valid[:, ego])
    if t < 0:
        return None
    return np.linalg.norm(pred[:, t, ego] - truth[t, ego], axis=-1)


def min_ade(pred, truth, valid, ego):
    ade = ego_ade_per_mode(pred, truth, valid, ego)
    return None if ade is None else float(ade.min())


def min_fde(pred, truth, valid, ego):
    fde = ego_fde_per_mode(pred, truth, valid, ego)
    return None if fde is None else float(fde.min())


def miss_rate(pred, truth, valid, ego, threshold=MISS_THRESHOLD):
    fde = ego_fde_per_mode(pred, truth, valid, ego)
    return None if fde is None else float(fde.min() > threshold)


def agent_fde(pred, truth, valid):
    """(c, M') final-step errors for agents with at least one valid future step."""
    agents = [a for a in range(valid.shape[1]) if valid[:, a].any()]
    if not agents:
        return None
    last = [_last_valid(valid[:, a]) for a in agents]
    return np.stack(
        [np.linalg.norm(pred[:, t, a] - truth[t, a], axis=-1) for a, t in zip(agents, last)], axis=1
    )


def joint_ade_per_mode(pred, truth, valid):
    if not valid.any():
        return None
    return _errors(pred, truth)[:, valid].mean(axis=1)


def min_joint_ade(pred, truth, valid):
    j = joint_ade_per_mode(pred, truth, valid)
    return None if j is None else float(j.min())


def min_joint_fde(pred, truth, valid):
    f = agent_fde(pred, truth, valid)
    return None if f is None else float(f.mean(axis=1).min())


def min_joint_mr(pred, truth, valid, threshold=MISS_THRESHOLD, modes=None):
    f = agent_fde(pred, truth, valid)
    if f is None:
        return None
    cleared = (f <= threshold).all(axis=1)
    if modes is not None:
        cleared = cleared[modes]
    return float(not cleared.any())


def _pair_close(pred, valid, radius):
    """(c, M, M) True where a pair comes within 2 * radius at a jointly valid step."""
    diff = pred[:, :, :, None, :] - pred[:, :, None, :, :]
    dist = np.linalg.norm(diff, axis=-1)  # (c, T, M, M)
    both = valid[:, :, None] & valid[:, None, :]
    m = valid.shape[1]
    close = (dist < 2.0 * radius) & both[None] & ~np.eye(m, dtype=bool)[None, None]
    return close.any(axis=1)


def mode_collisions(pred, valid, radius=COLLISION_RADIUS, ego=None):
    """Per-mode collision flags; restricted to pairs with ``ego`` when given."""
    close = _pair_close(pred, valid, radius)
    if ego is None:
        return close.any(axis=(1, 2))
    return close[:, ego, :].any(axis=1)


def cross_collision_rate(pred, valid, radius=COLLISION_RADIUS):
    return float(mode_collisions(pred, valid, radius).mean())


def ego_collision_rate(pred, valid, ego, radius=COLLISION_RADIUS):
    return float(mode_collisions(pred, valid, radius, ego=ego).mean())


def consistent_min_joint_mr(pred, truth, valid, threshold=MISS_THRESHOLD, radius=COLLISION_RADIUS):
    free = np.flatnonzero(~mode_collisions(pred, valid, radius))
    if free.size == 0:
        return 1.0
    return min_joint_mr(pred, truth, valid, threshold, modes=free)


def scene_metrics(pred, truth, valid, ego, threshold=MISS_THRESHOLD, radius=COLLISION_RADIUS):
    """All nine metrics for one scene, plus the joint-best-mode collision variant.

    Ego-based entries are None when the ego has no valid future step.
    """
    out = OrderedDict()
    out["minADE"] = min_ade(pred, truth, valid, ego)
    out["minFDE"] = min_fde(pred, truth, valid, ego)
    out["MR"] = miss_rate(pred, truth, valid, ego, threshold)
    out["minJointADE"] = min_joint_ade(pred, truth, valid)
    out["minJointFDE"] = min_joint_fde(pred, truth, valid)
    out["minJointMR"] = min_joint_mr(pred, truth, valid, threshold)
    out["crossCollisionRate"] = cross_collision_rate(pred, valid, radius)
    out["egoCollisionRate"] = ego_collision_rate(pred, valid, ego, radius)
    out["consistentMinJointMR"] = consistent_min_joint_mr(pred, truth, valid, threshold, radius)
    jade = joint_ade_per_mode(pred, truth, valid)
    if jade is not None:
        best = int(np.argmin(jade))
        out["jointBestMode"] = best
        out["jointBestCrossCollision"] = float(mode_collisions(pred[best : best + 1], valid, radius)[0])
        out["jointBestEgoCollision"] = float(mode_collisions(pred[best : best + 1], valid, radius, ego=ego)[0])
    return out


@dataclass
class EvalReport:
    values: OrderedDict
    scenes: int
    skipped: int

    def to_dict(self):
        d = OrderedDict((k, self.values[k]) for k in REPORT_KEYS)
        d["scenes"] = self.scenes
        d["skipped"] = self.skipped
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def __getitem__(self, key):
        return self.values[key]


def evaluate(preds, truths, valids, egos, threshold=MISS_THRESHOLD, radius=COLLISION_RADIUS):
    """Average per-scene metrics in scene order.

    Scenes whose ego has no valid future step are skipped (and counted) for
    every metric.

    Returns:
        (EvalReport, list of per-scene OrderedDicts).
    """
    rows = []
    skipped = 0
    for pred, truth, valid, ego in zip(preds, truths, valids, egos):
        row = scene_metrics(np.asarray(pred), np.asarray(truth), np.asarray(valid, dtype=bool), int(ego),
                            threshold, radius)
        if row["minADE"] is None:
            skipped += 1
            continue
        rows.append(row)
    values = OrderedDict()
    for k in REPORT_KEYS:
        values[k] = float(np.mean([r[k] for r in rows])) if rows else float("nan")
    return EvalReport(values, len(rows), skipped), rows

"""Mask plans for trajectory and map reconstruction.

Trajectory strategies: ``S`` (social), ``T`` (temporal), ``ST`` (social and
temporal). Map strategies: ``Po`` (point), ``Pa`` (patch), ``B`` (block).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

TRAJ_STRATEGIES = ("S", "T", "ST")
MAP_STRATEGIES = ("Po", "Pa", "B")
PATCH_WIDTH = 3


class DegenerateMaskError(ValueError):
    pass


def mask_count(ratio, length):
    """``ceil(ratio * length)`` robust to float noise such as 0.7 * 10."""
    return int(math.ceil(round(ratio * length, 9)))


def _check_ratio(ratio):
    if not 0.1 <= ratio <= 0.9:
        raise ValueError(f"masking ratio must lie in [0.1, 0.9], got {ratio}")


@dataclass
class TrajMaskPlan:
    masked: np.ndarray  # (M, t_obs) bool
    strategy: str
    ratio: float

    def to_dict(self):
        return {"kind": "trajectory", "strategy": self.strategy, "ratio": self.ratio,
                "masked": self.masked.astype(int).tolist()}


@dataclass
class MapMaskPlan:
    masked: np.ndarray  # (polylines, P) bool
    strategy: str
    ratio: float

    def to_dict(self):
        return {"kind": "map", "strategy": self.strategy, "ratio": self.ratio,
                "masked": self.masked.astype(int).tolist()}


def plan_to_json(plan):
    return json.dumps(plan.to_dict(), separators=(",", ":"))


def nearby_agents(history, valid, ego_index):
    """Surrounding agents ordered by distance to the ego at the last observed step.

    Returns the closest ``ceil((M - 1) / 2)``; ties go to the lower index.
    """
    m = history.shape[0]
    last = history.shape[1] - 1
    ego = history[ego_index, last]
    cand = []
    for i in range(m):
        if i == ego_index:
            continue
        d = float(np.hypot(*(history[i, last] - ego))) if valid[i, last] else math.inf
        cand.append((d, i))
    cand.sort()
    return [i for _, i in cand[: int(math.ceil((m - 1) / 2))]]


def _suffix(valid_steps, k):
    """Last ``k`` valid steps, keeping the first valid step visible when short."""
    n = len(valid_steps)
    if n <= 1:
        return []
    return list(valid_steps[-min(k, n - 1):])


def _prefix(valid_steps, k):
    """First ``k`` valid steps, keeping the last valid step visible when short."""
    n = len(valid_steps)
    if n <= 1:
        return []
    return list(valid_steps[: min(k, n - 1)])


def _random_steps(valid_steps, k, rng):
    n = len(valid_steps)
    if n <= 1:
        return []
    take = min(k, n - 1)
    idx = rng.choice(n, take)
    return [valid_steps[i] for i in sorted(idx)]


def plan_traj_mask(strategy, ratio, valid, ego_index, rng, history=None):
    """Build a trajectory mask plan.

    Args:
        strategy: one of ``S``, ``T``, ``ST``.
        ratio: masking ratio; each masked agent hides ``ceil(ratio * t_obs)`` steps.
        valid: (M, t_obs) validity of the observed history.
        ego_index: ego row.
        rng: an ``RngStream``.
        history: (M, t_obs, 2) positions; required by ``S`` to rank nearby agents.
    """
    if strategy not in TRAJ_STRATEGIES:
        raise ValueError(f"unknown trajectory strategy {strategy!r}")
    _check_ratio(ratio)
    valid = np.asarray(valid, dtype=bool)
    m, t_obs = valid.shape
    k = mask_count(ratio, t_obs)
    if k <= 0 or k >= t_obs:
        raise DegenerateMaskError(f"degenerate mask: ratio {ratio} with t_obs {t_obs} gives k={k}")
    steps = [np.flatnonzero(valid[i]) for i in range(m)]
    masked = np.zeros((m, t_obs), dtype=bool)
    others = [i for i in range(m) if i != ego_index]

    if strategy == "T":
        for i in range(m):
            masked[i, _random_steps(steps[i], k, rng)] = True
    elif strategy == "S":
        if history is None:
            raise ValueError("social masking needs agent positions to find nearby agents")
        masked[ego_index, _suffix(steps[ego_index], k)] = True
        for i in nearby_agents(history, valid, ego_index):
            masked[i, _prefix(steps[i], k)] = True
    else:
        masked[ego_index, _suffix(steps[ego_index], k)] = True
        order = [others[j] for j in rng.permutation(len(others))]
        n_temporal = int(math.ceil(len(others) / 2))
        for i in order[:n_temporal]:
            masked[i, _random_steps(steps[i], k, rng)] = True
        for i in order[n_temporal:]:
            masked[i, _suffix(steps[i], k)] = True
    return TrajMaskPlan(masked, strategy, float(ratio))


def _patch_layout(p, q, w, rng):
    """Place non-adjacent runs (widths w, last one possibly shorter) totalling q."""
    runs = [w] * (q // w)
    if q % w:
        runs.append(q % w)
    slack = p - q - (len(runs) - 1)
    if slack < 0:
        raise DegenerateMaskError(
            f"patch masking cannot fit {q} points in runs of {w} with gaps into {p} points"
        )
    runs = [runs[i] for i in rng.permutation(len(runs))]
    # distribute slack into len(runs) + 1 gaps, uniformly over compositions
    n_gaps = len(runs) + 1
    cuts = np.sort(rng.choice(slack + n_gaps - 1, n_gaps - 1))
    bounds = np.concatenate([[-1], cuts, [slack + n_gaps - 1]])
    extra = np.diff(bounds) - 1
    row = np.zeros(p, dtype=bool)
    pos = int(extra[0])
    for r, run in enumerate(runs):
        row[pos : pos + run] = True
        pos += run + 1 + int(extra[r + 1])
    return row


def plan_map_mask(strategy, ratio, n_polylines, points, rng, patch_width=PATCH_WIDTH):
    """Build a map mask plan over an ``n_polylines x points`` lattice."""
    if strategy not in MAP_STRATEGIES:
        raise ValueError(f"unknown map strategy {strategy!r}")
    _check_ratio(ratio)
    masked = np.zeros((n_polylines, points), dtype=bool)
    if strategy == "Po":
        total = n_polylines * points
        q = mask_count(ratio, total)
        if q <= 0 or q >= total:
            raise DegenerateMaskError(f"degenerate mask: {q} of {total} points")
        masked.reshape(-1)[rng.choice(total, q)] = True
    elif strategy == "Pa":
        if points < patch_width:
            raise ValueError(f"patch masking needs P >= {patch_width}, got P={points}")
        q = mask_count(ratio, points)
        for i in range(n_polylines):
            masked[i] = _patch_layout(points, q, patch_width, rng)
    else:
        q = mask_count(ratio, points)
        if q >= points:
            raise DegenerateMaskError(f"degenerate mask: block of {q} covers all {points} points")
        starts = rng.integers(0, points - q + 1, n_polylines)
        for i in range(n_polylines):
            masked[i, starts[i] : starts[i] + q] = True
    return MapMaskPlan(masked, strategy, float(ratio))


def split_visible(valid, masked):
    """Partition valid slots into (visible, targets) index tuples.

    Both are sorted lists of lattice coordinates; invalid slots appear in neither.
    """
    valid = np.asarray(valid, dtype=bool)
    masked = np.asarray(masked, dtype=bool)
    if valid.shape != masked.shape:
        raise ValueError(f"plan shape {masked.shape} does not match lattice {valid.shape}")
    vis = [tuple(int(x) for x in ix) for ix in np.argwhere(valid & ~masked)]
    tgt = [tuple(int(x) for x in ix) for ix in np.argwhere(valid & masked)]
    return vis, tgt


def runs(row):
    """Lengths of maximal runs of True in a 1-D boolean array."""
    out = []
    n = 0
    for v in row:
        if v:
            n += 1
        elif n:
            out.append(n)
            n = 0
    if n:
        out.append(n)
    return out

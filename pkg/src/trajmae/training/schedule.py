"""Stage plans for continual pre-training and its two baselines, and the fine-tune LR rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

MODES = ("continual-pretrain", "sequential", "joint")
JOINT_SEP = "+"


class ScheduleError(ValueError):
    pass


@dataclass
class StagePlan:
    """Per-stage step quotas.

    ``quotas[s][strategy]`` is the number of steps ``strategy`` trains in stage
    ``s`` (0-indexed). In ``joint`` mode the single stage runs ``N`` steps that
    each train every strategy at once.
    """

    mode: str
    order: tuple
    N: int
    M_carry: int
    quotas: list

    @property
    def num_stages(self):
        return len(self.quotas)

    def total_steps(self):
        if self.mode == "joint":
            return self.N
        return sum(sum(q.values()) for q in self.quotas)

    def strategy_totals(self):
        tot = {s: 0 for s in self.order}
        for q in self.quotas:
            for s, n in q.items():
                tot[s] += n
        return tot

    def table(self):
        """Rows per strategy, columns per stage, as in the continual tables."""
        return {s: [q.get(s, 0) for q in self.quotas] for s in self.order}

    def to_dict(self):
        return {
            "mode": self.mode,
            "order": list(self.order),
            "N": self.N,
            "M_carry": self.M_carry,
            "stages": [{s: q[s] for s in self.order if s in q} for q in self.quotas],
        }


def continual_quota(i, s, n, N, M_carry):
    """Steps strategy ``i`` trains in stage ``s`` (both 1-indexed)."""
    if s < i:
        return 0
    if s == i:
        return N - (n - i) * M_carry
    return M_carry


def build_schedule(mode, order, N, M_carry=0):
    order = tuple(order)
    n = len(order)
    if n < 1:
        raise ScheduleError("schedule needs at least one strategy")
    if len(set(order)) != n:
        raise ScheduleError(f"duplicate strategies in order {order}")
    if N < 1:
        raise ScheduleError(f"N must be positive, got {N}")
    if mode == "continual-pretrain":
        if M_carry < 0 or N <= (n - 1) * M_carry:
            raise ScheduleError(
                f"continual-pretrain requires N > (n-1)*M_carry; got (n={n}, N={N}, M_carry={M_carry})"
            )
        quotas = []
        for s in range(1, n + 1):
            quotas.append({order[i - 1]: continual_quota(i, s, n, N, M_carry) for i in range(1, s + 1)})
    elif mode == "sequential":
        quotas = [{order[s]: N} for s in range(n)]
    elif mode == "joint":
        quotas = [{st: N for st in order}]
    else:
        raise ScheduleError(f"unknown schedule mode {mode!r}; expected one of {MODES}")
    return StagePlan(mode, order, int(N), int(M_carry), quotas)


def materialize_stage_sequence(plan, stage, rng):
    """Shuffled step sequence for ``stage``.

    Each entry names the strategy trained at that step. In joint mode every
    entry is all strategies joined with ``+``.
    """
    if not 0 <= stage < plan.num_stages:
        raise ScheduleError(f"stage {stage} out of range for {plan.num_stages} stages")
    if plan.mode == "joint":
        return [JOINT_SEP.join(plan.order)] * plan.N
    quota = plan.quotas[stage]
    seq = []
    for s in plan.order:
        seq.extend([s] * quota.get(s, 0))
    if len(quota) > 1:
        perm = rng.permutation(len(seq))
        seq = [seq[i] for i in perm]
    return seq


@dataclass
class LRSchedule:
    lr0: float = 1e-3
    period: int = 300
    factor: float = 2.0
    horizon: int = 1500


def lr_at(step, cfg):
    """Step-decayed learning rate: divide by ``factor`` at each period boundary up to the horizon.

    A boundary exactly at the horizon counts.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    boundaries = min(cfg.horizon // cfg.period, step // cfg.period)
    return cfg.lr0 / math.pow(cfg.factor, boundaries)

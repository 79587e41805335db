import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajmae.tensor import RngStream
from trajmae.training.schedule import (
    LRSchedule,
    ScheduleError,
    build_schedule,
    continual_quota,
    lr_at,
    materialize_stage_sequence,
)


def test_reference_continual_table():
    plan = build_schedule("continual-pretrain", ("S", "T", "ST"), 120000, 30000)
    assert plan.table() == {"S": [60000, 30000, 30000], "T": [0, 90000, 30000], "ST": [0, 0, 120000]}


@given(st.integers(1, 6), st.integers(1, 10**6), st.integers(0, 10**5))
def test_each_strategy_totals_N(n, N, M):
    if N <= (n - 1) * M:
        with pytest.raises(ScheduleError):
            build_schedule("continual-pretrain", [f"s{i}" for i in range(n)], N, M)
        return
    plan = build_schedule("continual-pretrain", [f"s{i}" for i in range(n)], N, M)
    assert all(v == N for v in plan.strategy_totals().values())
    for i in range(1, n + 1):
        assert sum(continual_quota(i, s, n, N, M) for s in range(1, n + 1)) == N


def test_baseline_modes():
    seq = build_schedule("sequential", ("Po", "Pa", "B"), 10)
    assert seq.table() == {"Po": [10, 0, 0], "Pa": [0, 10, 0], "B": [0, 0, 10]}
    joint = build_schedule("joint", ("S", "T"), 7)
    assert joint.num_stages == 1 and joint.total_steps() == 7
    assert materialize_stage_sequence(joint, 0, RngStream(0)) == ["S+T"] * 7


def test_stage_sequences_are_shuffled_and_complete():
    plan = build_schedule("continual-pretrain", ("S", "T", "ST"), 40, 10)
    seq = materialize_stage_sequence(plan, 2, RngStream(0, "sched"))
    assert sorted(seq) == sorted(["S"] * 10 + ["T"] * 10 + ["ST"] * 40)
    assert seq != sorted(seq)
    assert seq == materialize_stage_sequence(plan, 2, RngStream(0, "sched"))
    with pytest.raises(ScheduleError):
        materialize_stage_sequence(plan, 3, RngStream(0))


@pytest.mark.parametrize("bad", [("continual-pretrain", (), 10, 0), ("joint", ("S", "S"), 10, 0),
                                 ("other", ("S",), 10, 0), ("sequential", ("S",), 0, 0)])
def test_invalid_schedules(bad):
    with pytest.raises(ScheduleError):
        build_schedule(*bad)


def test_lr_halves_at_boundaries_up_to_horizon():
    cfg = LRSchedule(lr0=1e-3, period=300, factor=2.0, horizon=1500)
    assert lr_at(0, cfg) == 1e-3
    assert lr_at(299, cfg) == 1e-3
    assert lr_at(300, cfg) == 5e-4
    assert lr_at(1499, cfg) == 1e-3 / 16
    assert lr_at(1500, cfg) == 1e-3 / 32
    assert lr_at(10**6, cfg) == 1e-3 / 32
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


@given(st.integers(0, 5000), st.integers(0, 5000))
def test_lr_is_monotone(a, b):
    cfg = LRSchedule()
    lo, hi = sorted((a, b))
    assert lr_at(hi, cfg) <= lr_at(lo, cfg)

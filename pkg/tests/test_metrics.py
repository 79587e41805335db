import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajmae import metrics as mt
from trajmae.oracles import oracle_evaluate, oracle_scene_metrics
from trajmae.verify import metric_hand_cases, random_metric_instance


@pytest.mark.parametrize("case", metric_hand_cases(), ids=lambda c: c[0])
def test_hand_cases(case):
    _, pred, truth, valid, ego, expected = case
    got = mt.scene_metrics(pred, truth, valid, ego)
    for k, v in expected.items():
        assert got[k] == v, k


def test_two_mode_ego_by_hand():
    truth = np.array([[[0.0, 0.0]], [[1.0, 0.0]], [[2.0, 0.0]]])
    pred = np.stack([truth + [0.0, 3.0], truth + [4.0, 0.0]])
    pred[1, -1, 0] = [2.0, 1.0]
    valid = np.ones((3, 1), bool)
    # mode 0 ADE 3, mode 1 ADE (4+4+1)/3 = 3
    assert mt.min_ade(pred, truth, valid, 0) == pytest.approx(3.0, abs=1e-15)
    assert mt.min_fde(pred, truth, valid, 0) == 1.0
    assert mt.miss_rate(pred, truth, valid, 0) == 0.0


def test_consistent_joint_mr_counts_all_colliding_as_miss():
    truth = np.zeros((1, 2, 2))
    truth[0, 1] = [5.0, 0.0]
    valid = np.ones((1, 2), bool)
    pred = np.stack([truth.copy()])
    assert mt.consistent_min_joint_mr(pred, truth, valid) == 0.0
    pred[0, 0, 1] = [0.2, 0.0]
    assert mt.min_joint_mr(pred, truth, valid) == 1.0
    truth[0, 1] = [0.8, 0.0]
    pred = np.stack([truth.copy()])
    # the exact mode collides, so no collision-free mode is left
    assert mt.min_joint_mr(pred, truth, valid) == 0.0
    assert mt.consistent_min_joint_mr(pred, truth, valid) == 1.0


def test_invalid_future_step_is_ignored():
    truth = np.zeros((3, 1, 2))
    valid = np.array([[True], [True], [False]])
    pred = np.zeros((1, 3, 1, 2))
    pred[0, 2, 0] = [100.0, 0.0]
    assert mt.min_fde(pred, truth, valid, 0) == 0.0 and mt.min_ade(pred, truth, valid, 0) == 0.0


@given(st.integers(0, 2**32 - 1))
def test_scene_metrics_match_brute_force(seed):
    pred, truth, valid, ego = random_metric_instance(np.random.default_rng(seed))
    got = mt.scene_metrics(pred, truth, valid, ego)
    want = oracle_scene_metrics(pred, truth, valid, ego)
    if want is None:
        assert got["minADE"] is None
        return
    for k in mt.REPORT_KEYS:
        assert math.isclose(got[k], want[k], rel_tol=0, abs_tol=1e-12), k


def test_evaluate_skips_scenes_without_ego_future(nprng):
    insts = [random_metric_instance(nprng) for _ in range(30)]
    preds, truths, valids, egos = zip(*insts)
    report, rows = mt.evaluate(preds, truths, valids, egos)
    want, n = oracle_evaluate(preds, truths, valids, egos)
    assert report.scenes == n and report.scenes + report.skipped == 30
    for k in mt.REPORT_KEYS:
        assert report[k] == pytest.approx(want[k], abs=1e-12)
    assert list(report.to_dict())[: len(mt.REPORT_KEYS)] == list(mt.REPORT_KEYS)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50.0))
def test_metrics_scale_with_coordinates(seed, scale):
    pred, truth, valid, ego = random_metric_instance(np.random.default_rng(seed))
    if not valid[:, ego].any():
        return
    a = mt.min_ade(pred, truth, valid, ego)
    b = mt.min_ade(pred * scale, truth * scale, valid, ego)
    assert b == pytest.approx(a * scale, rel=1e-9)

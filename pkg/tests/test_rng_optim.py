import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajmae.tensor import ParamStore, RngStream, adam_step, mix


@given(st.integers(0, 2**63 - 1), st.text(max_size=12))
def test_streams_are_reproducible(seed, tag):
    a, b = RngStream(seed, tag), RngStream(seed, tag)
    np.testing.assert_array_equal(a.normal(size=5), b.normal(size=5))
    assert a.draws == b.draws == 1


def test_distinct_tags_give_distinct_keys():
    keys = {mix(0, t) for t in ("scene", "layout", "pretrain/batch", "pretrain/mask", "")}
    assert len(keys) == 5
    assert mix(0, "a") != mix(1, "a")


@given(st.integers(0, 1000), st.integers(0, 20))
def test_state_round_trip_through_json(seed, warm):
    s = RngStream(seed, "x")
    for _ in range(warm):
        s.random()
    state = json.loads(json.dumps(s.get_state()))
    t = RngStream.from_state(state)
    np.testing.assert_array_equal(s.integers(0, 1000, 8), t.integers(0, 1000, 8))
    assert s.draws == t.draws


def test_state_for_other_stream_rejected():
    with pytest.raises(ValueError):
        RngStream(1, "a").set_state(RngStream(1, "b").get_state())


def test_choice_is_distinct():
    c = RngStream(5, "c").choice(10, 7)
    assert len(set(c.tolist())) == 7 and c.max() < 10


def adam_oracle(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return theta


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=8), st.floats(1e-4, 1e-1))
def test_adam_matches_scalar_recurrence(gs, lr):
    s = ParamStore()
    s.add("w", np.array([0.3]))
    for g in gs:
        adam_step(s, {"w": np.array([g])}, lr)
    assert s["w"].data[0] == pytest.approx(adam_oracle(0.3, gs, lr), rel=1e-12, abs=1e-15)
    assert s.step_count == len(gs)


def test_adam_first_step_moves_by_lr():
    s = ParamStore()
    s.add("w", np.zeros(3))
    adam_step(s, {"w": np.array([2.0, -0.5, 0.0])}, 0.01)
    np.testing.assert_allclose(s["w"].data, [-0.01, 0.01, 0.0], rtol=1e-6)


def test_adam_missing_gradient():
    s = ParamStore()
    s.add("w", np.zeros(1))
    with pytest.raises(KeyError):
        adam_step(s, {}, 0.1)


def test_store_copy_is_deep():
    s = ParamStore()
    s.add("w", np.ones(2))
    adam_step(s, {"w": np.ones(2)}, 0.1)
    c = s.copy()
    c["w"].data[0] = 9.0
    c.m["w"][0] = 9.0
    assert s["w"].data[0] != 9.0 and s.m["w"][0] != 9.0 and c.step_count == 1

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajmae import scene as sc
from trajmae import kernels


@pytest.mark.parametrize("layout", sc.LAYOUTS)
def test_maps_have_uniformly_spaced_points(layout):
    vmap = sc.build_map(layout, 7)
    assert vmap.lane_centers()
    for pl in vmap.polylines:
        assert pl.points.shape == (sc.DEFAULT_POINTS, 2)
        assert pl.type_tag in sc.TYPE_TAGS
        seg = np.linalg.norm(np.diff(pl.points, axis=0), axis=1)
        np.testing.assert_allclose(seg, seg.mean(), rtol=1e-6)


def test_unknown_layout():
    with pytest.raises((ValueError, sc.MapError)):
        sc.build_map("roundabout", 0)


@settings(max_examples=25)
@given(st.integers(0, 2**40))
def test_scene_is_in_ego_frame(seed):
    cfg = sc.DataConfig()
    s = sc.make_scene(seed, cfg)
    e, t = s.ego_index, s.t_obs - 1
    assert s.valid[e].all()
    np.testing.assert_allclose(s.positions[e, t], 0.0, atol=1e-9)
    d = s.positions[e, t] - s.positions[e, t - 1]
    assert abs(d[1]) < 1e-9 and d[0] >= 0
    assert np.all(s.positions[~s.valid] == 0.0)
    assert np.all(np.isfinite(s.positions))


@settings(max_examples=25)
@given(st.integers(0, 2**40))
def test_late_agents_enter_and_stay(seed):
    s = sc.make_scene(seed, sc.DataConfig())
    for row in s.valid:
        first = int(np.argmax(row))
        assert row[first:].all()
        assert first < s.t_obs


@settings(max_examples=25)
@given(st.integers(0, 2**40))
def test_speeds_bounded(seed):
    s = sc.make_scene(seed, sc.DataConfig())
    both = s.valid[:, 1:] & s.valid[:, :-1]
    v = np.linalg.norm(np.diff(s.positions, axis=1), axis=-1)[both] / s.dt
    assert v.max() <= sc.V_MAX * 1.05


def test_dataset_is_deterministic_and_splits_differ():
    cfg = sc.DataConfig(train=3, val=2, test=2, seed=11)
    a, b = sc.generate_dataset(cfg), sc.generate_dataset(cfg)
    for split in ("train", "val", "test"):
        assert all(x.equals(y) for x, y in zip(a[split].scenes, b[split].scenes))
    assert not a["train"].scenes[0].equals(a["val"].scenes[0])
    assert sc.dataset_stats(a) == sc.dataset_stats(b)


def test_empty_split_rejected():
    with pytest.raises(ValueError):
        sc.generate_dataset(sc.DataConfig(train=0))


def test_shard_round_trip(tmp_path, small_shards):
    path = tmp_path / "train.jsonl"
    sc.write_shard(path, small_shards["train"])
    back = sc.read_shard(path)
    assert len(back) == len(small_shards["train"])
    for x, y in zip(back.scenes, small_shards["train"].scenes):
        assert x.equals(y)
        assert x.to_json() == y.to_json()
    first = json.loads(path.read_text().splitlines()[0])
    assert {"positions", "valid", "ego_index", "map", "dt", "t_obs"} <= set(first)


def test_rollout_follows_lane_without_neighbours():
    vmap = sc.build_map("straight", 0)
    lanes = [p.points for p in vmap.lane_centers()]
    pos, spd = sc.rollout_agents(lanes, [0], [5.0], [8.0], [0.0], [8.0], 20, 0.1)
    assert pos.shape == (20, 1, 2) and spd.shape == (20, 1)
    np.testing.assert_allclose(spd[:, 0], 8.0, atol=1e-9)
    step = np.linalg.norm(np.diff(pos[:, 0], axis=0), axis=1)
    np.testing.assert_allclose(step, 0.8, atol=1e-6)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
@settings(max_examples=20)
@given(st.integers(0, 2**40))
def test_compiled_rollout_matches_fallback(seed):
    from trajmae import _ckernels, _kernels_py

    r = np.random.default_rng(seed % 2**32)
    vmap = sc.build_map(sc.LAYOUTS[seed % 3], seed)
    pts = np.ascontiguousarray(np.stack([p.points for p in vmap.lane_centers()]))
    cum = np.ascontiguousarray(sc.arc_lengths(pts))
    m = 4
    args = (
        pts, cum, r.integers(0, len(pts), m).astype(np.int64), r.uniform(0, 30, m), r.uniform(2, 12, m),
        r.uniform(-0.3, 0.3, m), r.uniform(4, 12, m), 25, 0.1, np.asarray(sc.dynamics_params()),
    )
    for a, b in zip(_kernels_py.rollout(*args), _ckernels.rollout(*args)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)

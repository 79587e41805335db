import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajmae import model as mdl
from trajmae.tensor import ShapeError, no_grad
from trajmae.verify import blindness_suite


def permute_agents(batch, perm):
    inv = np.argsort(perm)
    return mdl.Batch(
        batch.hist[:, perm], batch.hist_valid[:, perm], batch.fut[:, perm], batch.fut_valid[:, perm],
        inv[batch.ego], batch.map_pts, batch.map_type, batch.map_valid,
    )


def permute_polylines(batch, perm):
    return mdl.Batch(
        batch.hist, batch.hist_valid, batch.fut, batch.fut_valid, batch.ego,
        batch.map_pts[:, perm], batch.map_type[:, perm], batch.map_valid[:, perm],
    )


@pytest.fixture(scope="module")
def store(small_cfg):
    return mdl.init_params(small_cfg, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        mdl.ModelConfig(d_model=10, heads=4).validate()
    with pytest.raises(ValueError):
        mdl.ModelConfig(enc_layers=1, dec_layers=1).validate()
    with pytest.raises(ValueError):
        mdl.ModelConfig(modes=0).validate()
    cfg = mdl.ModelConfig()
    assert mdl.ModelConfig.from_dict(__import__("json").loads(cfg.to_json())) == cfg


def test_init_is_seeded(small_cfg):
    a, b, c = mdl.init_params(small_cfg, 1), mdl.init_params(small_cfg, 1), mdl.init_params(small_cfg, 2)
    assert list(a) == list(b)
    assert all(np.array_equal(a[n].data, b[n].data) for n in a)
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a)


def test_forecast_shapes(store, small_cfg, small_batch):
    batch = small_batch.take(np.arange(4))
    with no_grad():
        off, logits = mdl.predict(store, batch, small_cfg)
    assert off.shape == (4, small_cfg.modes, small_cfg.t_fut, small_cfg.max_agents, 2)
    assert logits.shape == (4, small_cfg.modes)
    assert np.all(np.isfinite(off.data))


@settings(max_examples=10)
@given(st.permutations(range(6)))
def test_agent_permutation_equivariance(store, small_cfg, small_batch, perm):
    perm = np.array(perm)
    batch = small_batch.take(np.arange(3))
    with no_grad():
        off, lg = mdl.predict(store, batch, small_cfg)
        off2, lg2 = mdl.predict(store, permute_agents(batch, perm), small_cfg)
    np.testing.assert_allclose(off2.data, off.data[:, :, :, perm], rtol=0, atol=1e-12)
    np.testing.assert_allclose(lg2.data, lg.data, rtol=0, atol=1e-12)


@settings(max_examples=10)
@given(st.integers(0, 1000))
def test_polyline_permutation_invariance(store, small_cfg, small_batch, seed):
    batch = small_batch.take(np.arange(3))
    perm = np.random.default_rng(seed).permutation(small_cfg.max_polylines)
    with no_grad():
        off, _ = mdl.predict(store, batch, small_cfg)
        off2, _ = mdl.predict(store, permute_polylines(batch, perm), small_cfg)
    np.testing.assert_allclose(off2.data, off.data, rtol=0, atol=1e-12)


def test_padding_agents_do_not_leak(store, small_cfg, small_batch):
    batch = small_batch.take(np.arange(3))
    junk = mdl.Batch(**{f: getattr(batch, f).copy() for f in batch.__dataclass_fields__})
    junk.hist[~junk.hist_valid] = 1e6
    with no_grad():
        a = mdl.predict(store, batch, small_cfg)[0].data
        b = mdl.predict(store, junk, small_cfg)[0].data
    valid_agent = batch.hist_valid.any(axis=2)
    sel = np.broadcast_to(valid_agent[:, None, None, :, None], a.shape)
    assert np.max(np.abs(a - b)[sel]) == 0.0


def test_reconstruction_targets_are_masked_slots(store, small_cfg, small_batch):
    batch = small_batch.take(np.arange(2))
    masked = batch.hist_valid & (np.arange(small_cfg.t_obs) >= 5)
    with no_grad():
        pred, tgt = mdl.reconstruct(store, batch, masked, small_cfg, "traj")
    assert pred.shape == tgt.shape == (int(masked.sum()), 2)
    np.testing.assert_array_equal(tgt, batch.hist[masked])


def test_encoder_blindness_small():
    res = blindness_suite(n=10)
    assert res.passed and res.detail["max_abs_diff"] == 0.0


def test_collate_rejects_oversized_scenes(small_shards):
    with pytest.raises(ShapeError):
        mdl.collate(small_shards["train"].scenes[:1], mdl.ModelConfig(max_agents=2))

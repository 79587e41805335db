import numpy as np
import pytest

from trajmae import model as mdl
from trajmae.training import checkpoint as ck
from trajmae.training.pretrain import PretrainConfig, checkpoint_of, run_pretrain


@pytest.fixture(scope="module")
def pcfg():
    return PretrainConfig(order=("S", "T", "ST"), N=8, M_carry=2, batch_size=4, seed=5)


@pytest.fixture(scope="module")
def full_run(pcfg, small_cfg, small_batch):
    return run_pretrain(pcfg, small_cfg, small_batch)


def test_bytes_round_trip(full_run, pcfg, small_cfg, tmp_path):
    c = checkpoint_of(full_run, small_cfg, pcfg)
    raw = ck.to_bytes(c)
    assert raw[:4] == b"TMAE"
    path = tmp_path / "a.tmae"
    ck.save_checkpoint(path, c)
    back = ck.load_checkpoint(path)
    assert ck.to_bytes(back) == raw
    assert back.store.step_count == full_run.store.step_count == 24
    for n in c.store:
        assert np.array_equal(back.store[n].data, c.store[n].data)
        assert np.array_equal(back.store.m[n], c.store.m[n])


def test_split_run_matches_uninterrupted(full_run, pcfg, small_cfg, small_batch):
    # stop in the middle of stage 2
    part = run_pretrain(pcfg, small_cfg, small_batch, stop_after=11)
    assert not part.finished and part.state.stage == 1
    saved = ck.from_bytes(ck.to_bytes(checkpoint_of(part, small_cfg, pcfg)))
    rest = run_pretrain(pcfg, small_cfg, small_batch, resume=saved)
    assert rest.finished
    for n in full_run.store:
        assert np.array_equal(rest.store[n].data, full_run.store[n].data), n
        assert np.array_equal(rest.store.v[n], full_run.store.v[n]), n
    assert [r[3] for r in part.records + rest.records] == [r[3] for r in full_run.records]


@pytest.mark.parametrize("cut", [0, 3, 7, 40, -1])
def test_truncated_file_is_rejected(full_run, pcfg, small_cfg, cut):
    raw = ck.to_bytes(checkpoint_of(full_run, small_cfg, pcfg))
    with pytest.raises(ck.CheckpointError):
        ck.from_bytes(raw[:cut])


def test_bad_magic_version_and_trailing_bytes(full_run, pcfg, small_cfg):
    raw = ck.to_bytes(checkpoint_of(full_run, small_cfg, pcfg))
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ck.CheckpointError, match="version"):
        ck.from_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(ck.CheckpointError, match="trailing"):
        ck.from_bytes(raw + b"\0")


def test_model_mismatch(full_run, pcfg, small_cfg, tmp_path):
    path = tmp_path / "m.tmae"
    ck.save_checkpoint(path, checkpoint_of(full_run, small_cfg, pcfg))
    from dataclasses import asdict

    other = asdict(mdl.ModelConfig(d_model=8, heads=2, t_fut=6))
    with pytest.raises(ck.CheckpointMismatch, match="d_model"):
        ck.load_checkpoint(path, expected_model=other)


def test_stage_files_written(pcfg, small_cfg, small_batch, tmp_path):
    res = run_pretrain(pcfg, small_cfg, small_batch, out_dir=tmp_path)
    assert [p.rsplit("/", 1)[1] for p in res.checkpoints] == ["stage1.tmae", "stage2.tmae", "stage3.tmae"]
    last = ck.load_checkpoint(res.checkpoints[-1])
    assert last.counters["global_step"] == 24

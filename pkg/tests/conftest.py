import sys

import numpy as np
import pytest
from hypothesis import settings

from trajmae import model as mdl
from trajmae.scene import DataConfig, generate_dataset

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_shards():
    return generate_dataset(DataConfig(train=24, val=8, test=8, seed=3, t_fut=6))


@pytest.fixture(scope="session")
def small_cfg():
    return mdl.ModelConfig(
        d_model=16, enc_layers=2, dec_layers=1, fore_layers=1, heads=2, modes=3, t_fut=6
    )


@pytest.fixture(scope="session")
def small_batch(small_shards, small_cfg):
    return mdl.collate(small_shards["train"].scenes, small_cfg)


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is not None and acc.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acc.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)

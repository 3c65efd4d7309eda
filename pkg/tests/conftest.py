import numpy as np
import pytest
import torch

from seqdebias.config import ModelConfig
from seqdebias.data import synthetic_dataset


@pytest.fixture(scope="session")
def small_dataset():
    return synthetic_dataset(num_users=60, num_items=30, seed=7, max_len=50)


@pytest.fixture
def toy_config():
    # dropout 0 for deterministic forwards in tests
    return ModelConfig(
        mode="dcr", backbone="self_attention", max_len=50, dropout=0.0
    )


def make_config(mode="dcr", backbone="self_attention", **kw):
    kw.setdefault("max_len", 50)
    kw.setdefault("dropout", 0.0)
    return ModelConfig(mode=mode, backbone=backbone, **kw)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
    np.random.seed(0)

"""
Shared fixtures for the SMELL test suite.

Long benchmark reproductions are marked `slow` and only run with --runslow.
"""

import os
import sys

import numpy as np
import pytest

# Fix path to allow importing from src/
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))

from core.config import TrainConfig  # noqa: E402
from core.kernel import MarkerSet  # noqa: E402
from core.network import init_params  # noqa: E402
from modules.data_pipeline import Dataset, PairBatch  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow reproduction tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction test (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    """Keeps SMELL_* variables and a stray .env out of every test."""
    for name in list(os.environ):
        if name.startswith("SMELL_"):
            monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def tiny_config():
    """3-4-2 encoder, 2+2 markers, every loss term switched on."""
    return TrainConfig(
        latent_dim=2, hidden_dims=(4,), k_pos=2, k_neg=2, r_hc=1.0, r_r=0.1, r_d=0.1,
        batch_size=4, pretrain_epochs=0, joint_epochs=0, marker_sample_pairs=64,
    )


@pytest.fixture
def tiny_params():
    return init_params(3, 2, seed=11, hidden_dims=(4,), weight_std=0.5, bias_mean=0.1, bias_std=0.3)


@pytest.fixture
def tiny_markers():
    rng = np.random.default_rng(5)
    return MarkerSet(rng.uniform(0, 1, size=(2, 2)), rng.uniform(0, 1, size=(2, 2)))


@pytest.fixture
def tiny_features():
    return np.random.default_rng(3).uniform(0, 1, size=(6, 3))


@pytest.fixture
def tiny_batch():
    return PairBatch(
        i=np.array([0, 1, 2, 3]),
        j=np.array([4, 5, 0, 1]),
        similar=np.array([True, True, False, False]),
    )


@pytest.fixture
def toy_dataset():
    """Two well separated 2-D blobs, 20 rows each, already in [0, 1]."""
    rng = np.random.default_rng(0)
    a = rng.normal([0.2, 0.2], 0.03, size=(20, 2))
    b = rng.normal([0.8, 0.8], 0.03, size=(20, 2))
    labels = np.array([1] * 20 + [2] * 20)
    return Dataset(np.clip(np.vstack([a, b]), 0, 1), labels, "toy", ("A", "B"))


@pytest.fixture
def fast_config():
    """Small net and short schedule for end-to-end runs in seconds."""
    return TrainConfig(
        latent_dim=2, hidden_dims=(8,), k_pos=1, k_neg=1, batch_size=8,
        pretrain_epochs=3, joint_epochs=3, marker_sample_pairs=64, n_folds=4,
        init_weight_std=0.3, init_bias_mean=0.1,
    )

import pytest
import logging

import numpy as np

from app.data.synth import generate_object
from app.models.params import ModelParams
from app.schemas.config import ModelConfig, RunConfig, SynthConfig


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="Run the long training acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test, needs --run-slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def setup_logging():
    logging.basicConfig(level=logging.DEBUG)


@pytest.fixture
def temp_dir(tmp_path):
    return tmp_path


@pytest.fixture
def tiny_model_config():
    """Small dimensions that keep forward passes and finite differences cheap"""
    return ModelConfig(n_p=8, n_m=4, n_o=16, pos_hidden=6, attention_layers=1, sparsity_hidden=10)


@pytest.fixture
def tiny_synth():
    return SynthConfig(min_keypoints=3, max_keypoints=8)


@pytest.fixture
def tiny_params(tiny_model_config):
    return ModelParams.initialize(tiny_model_config, seed=3)


@pytest.fixture
def tiny_run_config(tiny_model_config, tiny_synth):
    return RunConfig(
        seed=11,
        model=tiny_model_config,
        synth=tiny_synth,
        train={"batch_size": 4, "steps": 3, "learning_rate": 1e-3, "log_every": 1, "prefetch": 0},
        sequence={"num_sequences": 2, "num_frames": 6, "objects_per_frame": 2},
        reloc={"num_places": 6, "objects_per_place": 2, "num_queries": 3},
        eval={
            "gaps": [1, 3],
            "top_n": 5,
            "usage_sizes": [1, 3, 6],
            "bench_sizes": [3, 6],
            "bench_repeats": 2,
            "histogram_bin_width": 4,
            "stats_objects": 6,
            "robustness_objects": 5,
        },
    )


@pytest.fixture
def sample_object(tiny_synth):
    return generate_object(5, tiny_synth, n_p=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

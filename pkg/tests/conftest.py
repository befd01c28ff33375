import copy
import os

import pytest

from src.config import PROFILES_DIR
from src.validator import load_run_config, validate_run_config

TINY_CONFIG = {
    "system": {
        "n_x": 2, "n_y": 2, "max_degree": 1, "n_subcarriers": 4, "stages": 2, "substages": 2,
        "n_paths": 2, "region_half_width": 5.0, "ap_height": 3.0, "snr_db": 10.0,
    },
    "model": {"d_model": 8, "heads": 2, "embed_dim": 8, "lstm_hidden": 8, "head_hidden": 8, "ff_hidden": 8},
    "train": {"sample_count": 12, "split": 0.75, "batch_size": 4, "epochs": 2, "learning_rate": 0.01},
    "eval": {
        "seeds": [0, 1], "snr_list": [0.0, 10.0], "budget": 4, "allocations": [[1, 4], [2, 2]],
        "beam_stages": 2, "beam_substages": 2, "beam_grid": [6, 12],
    },
}


@pytest.fixture
def tiny_document():
    return copy.deepcopy(TINY_CONFIG)


@pytest.fixture
def tiny_config(tiny_document):
    return validate_run_config(tiny_document)


@pytest.fixture(scope="session")
def desk_config():
    return load_run_config(os.path.join(PROFILES_DIR, "desk.json"))

"""
Pytest configuration for the Theseus suite.
Defines fixtures used across test files.
"""

import sys
import logging
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from tests.test_data_generator import TestDataGenerator
from theseus.core.data import generate_synthetic
from theseus.core.model import EncoderConfig, init_encoder

logger = logging.getLogger('tests')

TINY_ENCODER = {
    "vocab_size": 16,
    "max_seq_len": 8,
    "d_model": 8,
    "n_heads": 2,
    "d_ff": 16,
    "n_layers": 4,
    "n_classes": 2,
    "dropout_rate": 0.0,
}


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="run the long end-to-end experiment tests")


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "slow: long end-to-end experiment test (enable with --run-slow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def temp_dir(tmp_path):
    """A fresh temporary directory as a string path."""
    return str(tmp_path)


@pytest.fixture
def generator(tmp_path):
    return TestDataGenerator(str(tmp_path / "data"), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return EncoderConfig(**TINY_ENCODER)


@pytest.fixture
def tiny_encoder(tiny_config):
    return init_encoder(tiny_config, seed=3)


@pytest.fixture
def tiny_splits(tiny_config):
    """Small bracket-balance splits that fit the tiny encoder."""
    return generate_synthetic("bracket-balance", {"train": 64, "dev": 32, "test": 32},
                              seq_len=tiny_config.max_seq_len, vocab_size=tiny_config.vocab_size, seed=11)


@pytest.fixture
def tiny_batch(generator, tiny_config):
    return generator.random_tokens(4, tiny_config.max_seq_len, tiny_config.vocab_size)

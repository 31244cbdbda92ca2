"""
Shared fixtures: a tiny model, matching synthetic records and quiet configs
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from src.core.config import DownstreamConfig, TrainConfig
from src.core.tensor import get_tape
from src.data.synthetic import SyntheticSpec, generate_synthetic
from src.model.config import ModelConfig


@pytest.fixture(autouse=True)
def clean_tape():
    """Every test starts and ends with an empty computation tape"""
    get_tape().clear()
    yield
    get_tape().clear()


@pytest.fixture
def tiny_model():
    """d=8, one encoder and one decoder block, two heads, n=8, m=4"""
    return ModelConfig(hidden_size=8, encoder_blocks=1, decoder_blocks=1, heads=2, max_tokens=8,
                       max_frames=4, vocab_size=24, frame_dim=6)


@pytest.fixture
def tiny_spec():
    return SyntheticSpec(vocab_size=24, num_records=8, topics=2, noise=0.1, token_noise=0.0, seed=3,
                         max_tokens=8, min_tokens=3, max_frames=4, min_frames=2, frame_dim=6)


@pytest.fixture
def tiny_records(tiny_spec):
    return generate_synthetic(tiny_spec)


@pytest.fixture
def train_config(tiny_model):
    return TrainConfig(model=tiny_model, batch_size=4, queue_capacity=64, log_every=1,
                       prefetch=False, show_progress=False)


@pytest.fixture
def downstream_config():
    return DownstreamConfig(epochs=1, batch_size=4, beam_size=3, max_caption_len=6, negatives=100,
                            eval_workers=2, show_progress=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

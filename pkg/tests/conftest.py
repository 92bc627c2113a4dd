import numpy as np
import pytest

from hfprune.model import Model, ModelConfig, random_model


def make_config(d_model=32, n_layers=2, n_heads=4, d_hidden=24, vocab=64,
                max_seq=64) -> ModelConfig:
    return ModelConfig(d_model=d_model, n_layers=n_layers, n_heads=n_heads,
                       d_hidden=tuple([d_hidden] * n_layers), vocab_size=vocab,
                       max_seq=max_seq)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model(rng) -> Model:
    """2 layers, d_model=32, 4 heads, d_hidden=24, V=64."""
    return random_model(make_config(), rng)


@pytest.fixture
def tiny_tokens(rng) -> np.ndarray:
    return rng.integers(0, 64, size=8).astype(np.int64)

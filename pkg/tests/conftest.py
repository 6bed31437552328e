import numpy as np
import pytest

from tacsim.sensor import ElastomerSpec, Environment


@pytest.fixture
def elastomer():
    return ElastomerSpec()


@pytest.fixture
def quiet_env():
    """No noise, no quantization: deterministic physics only."""
    return Environment(fa1_noise_counts=0.0, sa2_noise_ut=0.0, quantization_ut=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

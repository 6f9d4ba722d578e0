import numpy as np
import pytest

from hilcodec.generator import GeneratorConfig
from hilcodec.model import Codec, QuantizerConfig

SMALL = GeneratorConfig(enc_channels=8, dec_channels=12)


@pytest.fixture(scope="session")
def small_codec():
    """Full-depth, narrow model with nonzero residual gains."""
    return Codec.random(SMALL, seed=3, gain=0.7, quant_config=QuantizerConfig(stages=6, entries=64))


@pytest.fixture(scope="session")
def default_codec():
    return Codec.random(GeneratorConfig(), seed=0, gain=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

"""The complete codec: generator plus residual vector quantizer."""

from dataclasses import dataclass

import numpy as np

from .core import DTYPE, as_tensor3
from .errors import ConfigurationError
from .generator import Generator, GeneratorConfig, NormStats, init_params
from .quantizer import Codebooks, rvq_decode, rvq_encode


@dataclass(frozen=True)
class QuantizerConfig:
    stages: int = 12
    entries: int = 1024
    decay: float = 0.99

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Codec:
    """Offline encode/decode; see :mod:`hilcodec.streaming` for chunked use."""

    def __init__(self, config, params, books, stats=None, quant_config=None):
        self.config = config
        self.quant_config = quant_config or QuantizerConfig(books.stages, books.entries, books.decay)
        if books.dim != config.latent_dim:
            raise ConfigurationError(f"codebook dim {books.dim} != latent dim {config.latent_dim}")
        self.params = params
        self.generator = Generator(config, params, stats)
        self.books = books

    @property
    def stats(self):
        return self.generator.stats

    @classmethod
    def random(cls, config=None, seed=0, gain=None, quant_config=None, stats=None):
        """Freshly initialised model (random codebooks)."""
        config = config or GeneratorConfig()
        quant_config = quant_config or QuantizerConfig()
        rng = np.random.default_rng(seed)
        params = init_params(config, rng, gain=gain)
        books = Codebooks.random(quant_config.stages, quant_config.entries, config.latent_dim, rng,
                                 quant_config.decay)
        return cls(config, params, books, stats, quant_config)

    def encode(self, wave, nq, state=None):
        """Waveform -> (codes (B, F, nq), zq)."""
        z = self.generator.encode_latent(wave, state)
        return rvq_encode(z, self.books, nq)

    def decode(self, codes, state=None):
        zq = rvq_decode(codes, self.books)
        return self.generator.decode_latent(zq, state)

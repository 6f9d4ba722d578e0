"""Streaming neural audio codec engine."""

from .errors import CodecError, ConfigurationError, CorruptStreamError, DegenerateWeightError, FormatError
from .generator import Generator, GeneratorConfig, NormStats, VcdScalars, compute_norm_stats, init_params
from .model import Codec, QuantizerConfig
from .quantizer import Codebooks, rvq_decode, rvq_encode
from .streaming import StreamDecoder, StreamEncoder, StreamState
from .bitstream import pack, unpack

__all__ = [
    "CodecError", "ConfigurationError", "CorruptStreamError", "DegenerateWeightError", "FormatError",
    "Generator", "GeneratorConfig", "NormStats", "VcdScalars", "compute_norm_stats", "init_params",
    "Codec", "QuantizerConfig", "Codebooks", "rvq_encode", "rvq_decode",
    "StreamEncoder", "StreamDecoder", "StreamState", "pack", "unpack",
]

"""WAV files, the weights container and normalisation-statistics files.

Weights container layout::

    b"HILW" | u32 little-endian JSON length | JSON header | float32 LE payload

The JSON header holds ``config`` (generator), ``quantizer``, ``stats`` and a
``tensors`` manifest of ``{name, shape, offset}`` entries, offsets counted in
bytes from the start of the payload.
"""

import json
import os
import struct
import tempfile

import numpy as np
from scipy.io import wavfile

from .errors import ConfigurationError, FormatError
from .generator import GeneratorConfig, NormStats, param_names
from .model import Codec, QuantizerConfig
from .quantizer import Codebooks

WEIGHTS_MAGIC = b"HILW"
_BOOK_TENSORS = ("rvq.vectors", "rvq.usage_ema", "rvq.cluster_sum_ema")


def read_wav(path):
    """Mono PCM16 or float32 WAV -> (sample_rate, float32 samples in [-1, 1])."""
    try:
        sr, data = wavfile.read(path)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        x = data
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")
    return int(sr), x


def write_wav(path, sample_rate, samples, pcm16=False):
    x = np.asarray(samples, np.float32).reshape(-1)
    if pcm16:
        x = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    _atomic_write(path, lambda f: wavfile.write(f, sample_rate, x))


def _atomic_write(path, writer):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            writer(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_stats(path, stats):
    text = json.dumps(stats.to_dict(), sort_keys=True, indent=1) + "\n"
    _atomic_write(path, lambda f: f.write(text.encode()))


def load_stats(path):
    try:
        with open(path, "rb") as f:
            return NormStats.from_dict(json.loads(f.read()))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"{path}: not a stats file ({e})") from None


def save_codec(path, codec):
    """Write parameters, codebooks, stats and configs to one container."""
    tensors = dict(codec.params)
    tensors["rvq.vectors"] = codec.books.vectors
    tensors["rvq.usage_ema"] = codec.books.usage_ema
    tensors["rvq.cluster_sum_ema"] = codec.books.cluster_sum_ema
    manifest, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "config": codec.config.to_dict(),
        "quantizer": codec.quant_config.to_dict(),
        "stats": codec.stats.to_dict(),
        "tensors": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode()

    def writer(f):
        f.write(WEIGHTS_MAGIC + struct.pack("<I", len(blob)) + blob)
        for c in chunks:
            f.write(c)

    _atomic_write(path, writer)


def load_codec(path):
    """Read a container; any inconsistency raises before a model is built."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != WEIGHTS_MAGIC or len(data) < 8:
        raise FormatError(f"{path}: not a weights container")
    (n,) = struct.unpack_from("<I", data, 4)
    try:
        header = json.loads(data[8 : 8 + n])
        config = GeneratorConfig.from_dict(header["config"])
        qconf = QuantizerConfig.from_dict(header["quantizer"])
        stats = NormStats.from_dict(header["stats"])
        manifest = header["tensors"]
    except (json.JSONDecodeError, KeyError, TypeError, ConfigurationError) as e:
        raise FormatError(f"{path}: bad container header ({e})") from None
    payload = memoryview(data)[8 + n :]
    tensors = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start < 0 or start + 4 * count > len(payload):
            raise FormatError(f"{path}: tensor {entry['name']} runs past the payload")
        tensors[entry["name"]] = np.frombuffer(payload, "<f4", count, start).reshape(shape).copy()
    expected = set(param_names(config)) | set(_BOOK_TENSORS)
    missing = expected - tensors.keys()
    extra = tensors.keys() - expected
    if missing or extra:
        raise FormatError(f"{path}: manifest mismatch (missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
    books = Codebooks(
        tensors.pop("rvq.vectors"),
        tensors.pop("rvq.usage_ema").astype(np.float64),
        tensors.pop("rvq.cluster_sum_ema").astype(np.float64),
        qconf.decay,
    )
    if (books.stages, books.entries) != (qconf.stages, qconf.entries):
        raise FormatError(f"{path}: codebook shape does not match the quantizer config")
    try:
        return Codec(config, tensors, books, stats, qconf)
    except ConfigurationError as e:
        raise FormatError(f"{path}: {e}") from None

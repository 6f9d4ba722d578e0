"""Chunked inference with per-layer history caches, and the RTF harness."""

from dataclasses import dataclass, field
import time

import numpy as np

from .core import DTYPE
from .errors import ConfigurationError, CorruptStreamError


@dataclass
class StreamState:
    """Histories of every causal layer plus not-yet-encoded samples.

    ``caches`` maps layer names to their last input samples; layers appear
    once they have seen input, starting from implicit zeros.
    """

    caches: dict = field(default_factory=dict)
    pending: np.ndarray = field(default_factory=lambda: np.zeros(0, DTYPE))
    frames_done: int = 0

    def reset(self):
        self.caches.clear()
        self.pending = np.zeros(0, DTYPE)
        self.frames_done = 0


class StreamEncoder:
    def __init__(self, codec, nq):
        self.codec = codec
        self.nq = nq
        self.state = StreamState()

    def reset(self):
        self.state.reset()

    def push(self, samples):
        """Feed any number of samples; returns codes (F, nq) for completed hops."""
        hop = self.codec.config.hop
        x = np.concatenate([self.state.pending, np.asarray(samples, DTYPE).reshape(-1)])
        n = x.size - x.size % hop
        self.state.pending = x[n:]
        if n == 0:
            return np.zeros((0, self.nq), np.int64)
        codes, _ = self.codec.encode(x[None, None, :n], self.nq, state=self.state.caches)
        self.state.frames_done += n // hop
        return codes[0]

    def finalize(self):
        """Drop (and return the count of) buffered samples short of a full hop."""
        left = self.state.pending.size
        self.state.pending = np.zeros(0, DTYPE)
        return left


class StreamDecoder:
    def __init__(self, codec):
        self.codec = codec
        self.state = StreamState()

    def reset(self):
        self.state.reset()

    def push(self, codes):
        """Decode frames (F, nq) into F * hop samples.

        On a bad index the state is left exactly as it was.
        """
        codes = np.asarray(codes)
        if codes.ndim != 2:
            raise ConfigurationError("codes must be (frames, nq)")
        if codes.size and (codes.min() < 0 or codes.max() >= self.codec.books.entries):
            raise CorruptStreamError(f"code index outside [0, {self.codec.books.entries})")
        if codes.shape[0] == 0:
            return np.zeros(0, DTYPE)
        wave = self.codec.decode(codes[None], state=self.state.caches)
        self.state.frames_done += codes.shape[0]
        return wave[0, 0]

    def finalize(self):
        # the polyphase transposed convolutions emit every sample of a frame
        # as soon as the frame arrives, so there is no tail to flush
        return np.zeros(0, DTYPE)


def stream_encode(codec, wave, chunk_sizes, nq):
    """Encode ``wave`` pushed in consecutive chunks of the given sizes."""
    enc = StreamEncoder(codec, nq)
    wave = np.asarray(wave, DTYPE).reshape(-1)
    out, pos = [], 0
    for c in chunk_sizes:
        out.append(enc.push(wave[pos : pos + c]))
        pos += c
    if pos < wave.size:
        out.append(enc.push(wave[pos:]))
    enc.finalize()
    return np.concatenate(out, axis=0)


def stream_decode(codec, codes, chunk_frames):
    dec = StreamDecoder(codec)
    out, pos = [], 0
    for c in chunk_frames:
        out.append(dec.push(codes[pos : pos + c]))
        pos += c
    if pos < len(codes):
        out.append(dec.push(codes[pos:]))
    return np.concatenate(out) if out else np.zeros(0, DTYPE)


def random_chunking(total, rng, max_chunk):
    """Random positive chunk sizes summing to ``total``."""
    sizes = []
    while total > 0:
        c = int(min(rng.integers(1, max_chunk + 1), total))
        sizes.append(c)
        total -= c
    return sizes


@dataclass
class RtfReport:
    seconds: float
    chunk: int
    encode_seconds: float
    decode_seconds: float

    @property
    def encode_rtf(self):
        return self.seconds / self.encode_seconds if self.encode_seconds > 0 else float("inf")

    @property
    def decode_rtf(self):
        return self.seconds / self.decode_seconds if self.decode_seconds > 0 else float("inf")

    def as_dict(self):
        return {
            "seconds": self.seconds,
            "chunk": self.chunk,
            "encode_rtf": self.encode_rtf,
            "decode_rtf": self.decode_rtf,
        }


def bench_rtf(encode_chunk, decode_chunk, seconds, sample_rate, chunk=320, clock=time.perf_counter, rng=None):
    """Time chunk-by-chunk coding of ``seconds`` of noise.

    ``encode_chunk(samples) -> codes`` and ``decode_chunk(codes) -> samples``
    are called once per chunk; only the time spent inside them is counted.
    """
    rng = rng or np.random.default_rng(0)
    n = int(round(seconds * sample_rate))
    wave = (0.1 * rng.standard_normal(n)).astype(DTYPE)
    t_enc = t_dec = 0.0
    for pos in range(0, n, chunk):
        piece = wave[pos : pos + chunk]
        t0 = clock()
        codes = encode_chunk(piece)
        t1 = clock()
        decode_chunk(codes)
        t2 = clock()
        t_enc += t1 - t0
        t_dec += t2 - t1
    return RtfReport(n / sample_rate, chunk, t_enc, t_dec)


def bench_codec(codec, seconds, nq=4, chunk=320, clock=time.perf_counter):
    enc = StreamEncoder(codec, nq)
    dec = StreamDecoder(codec)
    return bench_rtf(enc.push, dec.push, seconds, codec.config.sample_rate, chunk, clock)


class SyntheticClock:
    """A clock advanced only by :meth:`sleep`; used to validate the harness."""

    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, dt):
        self.now += dt


def synthetic_rtf(seconds=1.0, sample_rate=24000, chunk=320, factor=2.0):
    """Harness self-test: a workload costing ``1 / factor`` s per audio second."""
    clock = SyntheticClock()
    per_sample = 1.0 / (factor * sample_rate)

    def work(x):
        clock.sleep(per_sample * np.size(x))
        return x

    return bench_rtf(work, work, seconds, sample_rate, chunk, clock)

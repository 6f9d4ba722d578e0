"""Packed container for RVQ code indices.

Layout: a 17-byte header (little-endian integers) followed by the indices,
``codebook_bits`` each, MSB first, frame-major then stage-major, with the
final byte zero-padded.

    offset  size  field
    0       4     magic "HILC"
    4       1     version
    5       4     sample_rate
    9       2     hop
    11      1     codebook_bits
    12      1     nq
    13      4     num_frames
"""

from dataclasses import dataclass
import struct

import numpy as np

from .errors import ConfigurationError, CorruptStreamError, FormatError

MAGIC = b"HILC"
VERSION = 1
_HEADER = struct.Struct("<4sBIHBBI")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class BitstreamHeader:
    sample_rate: int
    hop: int
    codebook_bits: int
    nq: int
    num_frames: int
    version: int = VERSION

    def __post_init__(self):
        if not 1 <= self.codebook_bits <= 16:
            raise ConfigurationError("codebook_bits must be in [1, 16]")
        if not 1 <= self.nq <= 255:
            raise ConfigurationError("nq must be in [1, 255]")
        if self.hop < 1 or self.sample_rate < 1 or self.num_frames < 0:
            raise ConfigurationError("invalid sample_rate, hop or num_frames")

    @property
    def payload_bits(self):
        return self.num_frames * self.nq * self.codebook_bits

    @property
    def payload_bytes(self):
        return -(-self.payload_bits // 8)

    @property
    def num_samples(self):
        return self.hop * self.num_frames

    @property
    def bitrate(self):
        """Payload bits per second."""
        return self.sample_rate / self.hop * self.nq * self.codebook_bits

    def to_bytes(self):
        return _HEADER.pack(MAGIC, self.version, self.sample_rate, self.hop, self.codebook_bits,
                            self.nq, self.num_frames)


def pack(codes, sample_rate, hop, codebook_bits):
    """Serialise codes of shape (frames, nq)."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ConfigurationError("codes must have shape (frames, nq)")
    frames, nq = codes.shape
    header = BitstreamHeader(sample_rate, hop, codebook_bits, nq, frames)
    if codes.size and (codes.min() < 0 or codes.max() >= 1 << codebook_bits):
        raise ConfigurationError(f"code index does not fit in {codebook_bits} bits")
    shifts = np.arange(codebook_bits - 1, -1, -1, dtype=np.int64)
    bits = ((codes.astype(np.int64).reshape(-1, 1) >> shifts) & 1).astype(np.uint8)
    return header.to_bytes() + np.packbits(bits.reshape(-1)).tobytes()


def read_header(data):
    if len(data) < HEADER_SIZE:
        if data[: len(MAGIC)] != MAGIC[: len(data)]:
            raise FormatError("not a HILC bitstream (bad magic)")
        raise CorruptStreamError("truncated header", offset=len(data))
    magic, version, sr, hop, bits, nq, frames = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("not a HILC bitstream (bad magic)")
    if version != VERSION:
        raise FormatError(f"unsupported bitstream version {version}")
    try:
        return BitstreamHeader(sr, hop, bits, nq, frames, version)
    except ConfigurationError as e:
        raise CorruptStreamError(f"invalid header: {e}", offset=0) from None


def unpack(data):
    """Parse a bitstream into ``(header, codes)`` with codes (frames, nq) int64."""
    data = bytes(data)
    header = read_header(data)
    need = HEADER_SIZE + header.payload_bytes
    if len(data) < need:
        raise CorruptStreamError(
            f"payload truncated: expected {header.payload_bytes} bytes", offset=len(data)
        )
    if len(data) > need:
        raise CorruptStreamError("trailing bytes after payload", offset=need)
    payload = np.frombuffer(data, np.uint8, offset=HEADER_SIZE, count=header.payload_bytes)
    bits = np.unpackbits(payload)[: header.payload_bits].astype(np.int64)
    b = header.codebook_bits
    weights = np.int64(1) << np.arange(b - 1, -1, -1, dtype=np.int64)
    codes = bits.reshape(-1, b) @ weights if bits.size else np.zeros(0, np.int64)
    return header, codes.reshape(header.num_frames, header.nq)

"""Tensor primitives: convolutions, activations, weight norm, initialisation,
causal STFT and mel filter banks.

Signals are plain ``numpy`` arrays of shape ``(batch, channels, time)`` in
float32.  Every matrix product goes through :func:`tiled_matmul`, which feeds
BLAS fixed-shape tiles so that an output sample is computed by the same
instruction sequence no matter how long the surrounding signal is.  This is
what makes chunked (streaming) inference bitwise equal to offline inference.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from .errors import ConfigurationError, DegenerateWeightError

DTYPE = np.float32
KINDS = ("conv", "depthwise-conv", "pointwise-conv", "transposed-conv")
DEFAULT_TILE = 64
_BELOW_ONE = np.nextafter(np.float32(1.0), np.float32(0.0))


def as_tensor3(x, name="input"):
    """Return ``x`` as a float32 ``(B, C, T)`` array.

    1-D input is treated as a single mono signal, 2-D input as ``(B, T)`` mono.
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 1:
        x = x[None, None, :]
    elif x.ndim == 2:
        x = x[:, None, :]
    elif x.ndim != 3:
        raise ConfigurationError(f"{name} must have 1, 2 or 3 dimensions, got {x.ndim}")
    return x


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    dilation: int = 1
    causal: bool = True
    bias: bool = True
    groups: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if min(self.kernel, self.stride, self.dilation) < 1:
            raise ConfigurationError("kernel, stride and dilation must all be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be >= 1")
        if self.kind == "depthwise-conv":
            if self.in_channels != self.out_channels:
                raise ConfigurationError("depthwise-conv requires in_channels == out_channels")
            object.__setattr__(self, "groups", self.in_channels)
        if self.kind == "pointwise-conv" and (self.kernel, self.stride, self.dilation) != (1, 1, 1):
            raise ConfigurationError("pointwise-conv requires kernel = stride = dilation = 1")
        if self.groups not in (1, self.in_channels) or (
            self.groups != 1 and self.in_channels != self.out_channels
        ):
            raise ConfigurationError("only dense (groups=1) or depthwise grouping is supported")
        if self.kind == "transposed-conv":
            if not self.causal:
                raise ConfigurationError("only causal transposed convolutions are supported")
            if self.dilation != 1:
                raise ConfigurationError("transposed convolutions do not take a dilation")

    @property
    def weight_shape(self):
        if self.kind == "transposed-conv":
            return (self.in_channels, self.out_channels // self.groups, self.kernel)
        return (self.out_channels, self.in_channels // self.groups, self.kernel)

    @property
    def fan_in(self):
        """Number of products summed into one output sample."""
        taps = self.kernel
        if self.kind == "transposed-conv":
            taps = math.ceil(self.kernel / self.stride)
        return self.in_channels * taps // self.groups

    @property
    def history(self):
        """Input samples (or frames, for transposed convs) a stream must remember."""
        if self.kind == "transposed-conv":
            return math.ceil(self.kernel / self.stride) - 1
        return (self.kernel - 1) * self.dilation if self.causal else 0

    def output_length(self, t_in):
        if self.kind == "transposed-conv":
            return t_in * self.stride
        span = (self.kernel - 1) * self.dilation
        if self.causal:
            return (t_in - 1) // self.stride + 1 if t_in > 0 else 0
        return max((t_in + 2 * (span // 2) - span - 1) // self.stride + 1, 0) if t_in > 0 else 0

    def macs(self, t_out):
        """Multiply-adds needed to produce ``t_out`` output samples."""
        if self.kind == "transposed-conv":
            t_in = t_out // self.stride
            return self.out_channels * self.in_channels * self.kernel * t_in // self.groups
        return self.out_channels * self.in_channels * self.kernel * t_out // self.groups

    def n_params(self, weight_norm=True):
        n = int(np.prod(self.weight_shape))
        if weight_norm:
            n += self.weight_shape[0]
        if self.bias:
            n += self.out_channels
        return n


def tiled_matmul(w, cols, tile=DEFAULT_TILE):
    """``w @ cols`` for ``cols`` of shape (B, R, T), computed tile by tile.

    Every BLAS call sees a ``(R, tile)`` right operand, so its result for a
    given column does not depend on ``T``.
    """
    B, R, T = cols.shape
    n = -(-T // tile)
    pad = n * tile - T
    if pad:
        cols = np.concatenate([cols, np.zeros((B, R, pad), cols.dtype)], axis=2)
    tiles = np.ascontiguousarray(cols.reshape(B, R, n, tile).transpose(0, 2, 1, 3))
    out = np.matmul(w, tiles)
    return out.transpose(0, 2, 1, 3).reshape(B, w.shape[0], n * tile)[:, :, :T]


def _frames(x_pad, kernel, stride, dilation, t_out):
    # (B, C, L) -> (B, kernel, C, t_out) gathered input taps
    span = (kernel - 1) * dilation + 1
    win = np.lib.stride_tricks.sliding_window_view(x_pad, span, axis=-1)
    win = win[:, :, : (t_out - 1) * stride + 1 : stride, ::dilation]
    return win.transpose(0, 3, 1, 2)


def _conv_valid(x_pad, spec, weight, bias, t_out, tile):
    B = x_pad.shape[0]
    if t_out == 0:
        return np.zeros((B, spec.out_channels, 0), DTYPE)
    K, s, d = spec.kernel, spec.stride, spec.dilation
    if spec.groups > 1:
        # depthwise: fixed tap order, plain elementwise float32 arithmetic
        acc = None
        for k in range(K):
            tap = x_pad[:, :, k * d : k * d + s * (t_out - 1) + 1 : s] * weight[None, :, 0, k, None]
            acc = tap if acc is None else acc + tap
    else:
        if K == 1 and s == 1:
            cols = x_pad[:, :, :t_out]
        else:
            cols = _frames(x_pad, K, s, d, t_out).reshape(B, K * spec.in_channels, t_out)
        w2 = weight.transpose(0, 2, 1).reshape(spec.out_channels, K * spec.in_channels)
        acc = tiled_matmul(w2, cols, tile)
    if bias is not None:
        acc = acc + bias[None, :, None]
    return acc.astype(DTYPE, copy=False)


def _pad_input(x, spec, history):
    B, C, T = x.shape
    if spec.causal:
        P = spec.history
        if history is None:
            history = np.zeros((B, C, P), DTYPE)
        elif history.shape != (B, C, P):
            raise ConfigurationError(f"history shape {history.shape} != {(B, C, P)}")
        return np.concatenate([history, x], axis=2) if P else x
    span = (spec.kernel - 1) * spec.dilation
    left = span // 2
    return np.pad(x, ((0, 0), (0, 0), (left, left)))


def conv1d_forward(x, spec, weight, bias=None, history=None, tile=DEFAULT_TILE):
    """1-D convolution.

    Causal layers are left-padded with ``spec.history`` samples, taken from
    ``history`` when streaming and zeros otherwise.  Non-causal layers are
    padded symmetrically.
    """
    x = as_tensor3(x)
    if x.shape[1] != spec.in_channels:
        raise ConfigurationError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    if spec.kind == "transposed-conv":
        return transposed_conv1d_forward(x, spec, weight, bias, history, tile)
    weight = np.asarray(weight, DTYPE)
    if weight.shape != spec.weight_shape:
        raise ConfigurationError(f"weight shape {weight.shape} != {spec.weight_shape}")
    x_pad = _pad_input(x, spec, history)
    t_out = spec.output_length(x.shape[2])
    b = None if bias is None else np.asarray(bias, DTYPE)
    return _conv_valid(x_pad, spec, weight, b, t_out, tile)


def transposed_conv1d_forward(x, spec, weight, bias=None, history=None, tile=DEFAULT_TILE):
    """Causal transposed convolution with the tail trimmed to ``T * stride``.

    Computed in polyphase form: output phase ``j`` is a causal convolution of
    the input with taps ``j, j + stride, ...``.  ``history`` holds the last
    ``ceil(K / stride) - 1`` input frames.
    """
    x = as_tensor3(x)
    if x.shape[1] != spec.in_channels:
        raise ConfigurationError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    weight = np.asarray(weight, DTYPE)
    if weight.shape != spec.weight_shape:
        raise ConfigurationError(f"weight shape {weight.shape} != {spec.weight_shape}")
    B, C, T = x.shape
    s, K = spec.stride, spec.kernel
    M = math.ceil(K / s)
    if history is None:
        history = np.zeros((B, C, M - 1), DTYPE)
    elif history.shape != (B, C, M - 1):
        raise ConfigurationError(f"history shape {history.shape} != {(B, C, M - 1)}")
    x_pad = np.concatenate([history, x], axis=2) if M > 1 else x
    full = np.zeros((K + s * M,) + weight.shape[:2], DTYPE)
    full[:K] = weight.transpose(2, 0, 1)
    b = None if bias is None else np.asarray(bias, DTYPE)
    phases = []
    for j in range(s):
        # conv tap index M-1-m multiplies x[t - m]
        taps = full[j : j + s * M : s][::-1]  # (M, Cin, Cout/g)
        kernel = np.ascontiguousarray(taps.transpose(2, 1, 0))  # (Cout/g, Cin, M)
        if spec.groups > 1:
            kernel = kernel.transpose(1, 0, 2)  # (C, 1, M)
            sub = LayerSpec("depthwise-conv", C, C, M)
        else:
            sub = LayerSpec("conv", spec.in_channels, spec.out_channels, M)
        phases.append(_conv_valid(x_pad, sub, kernel, b, T, tile))
    y = np.stack(phases, axis=-1)
    return y.reshape(B, spec.out_channels, T * s)


def elu(x):
    x = np.asarray(x, DTYPE)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0))).astype(DTYPE, copy=False)


def tanh_clip(x):
    """tanh kept strictly inside (-1, 1) even where float32 tanh rounds to 1."""
    y = np.tanh(np.asarray(x, DTYPE))
    return np.clip(y, -_BELOW_ONE, _BELOW_ONE)


def fold_weight_norm(direction, gain):
    """Fold a weight-norm pair into a plain kernel: ``g * v / ||v||``.

    The norm is taken per slice along the first axis (per output channel for
    convolutions).
    """
    v = np.asarray(direction, np.float64)
    g = np.asarray(gain, np.float64).reshape(-1)
    norms = np.sqrt((v.reshape(v.shape[0], -1) ** 2).sum(axis=1))
    if np.any(norms == 0):
        raise DegenerateWeightError("weight-norm direction has a zero-norm slice")
    if g.shape[0] != v.shape[0]:
        raise ConfigurationError("one gain per leading-axis slice is required")
    scale = (g / norms).reshape((-1,) + (1,) * (v.ndim - 1))
    return (v * scale).astype(DTYPE)


def init_layer(spec, followed_by_activation, rng):
    """He (activation follows) or LeCun (no activation) normal initialisation.

    Returns ``(weight, bias)``; the bias is zero or None.
    """
    gain = 2.0 if followed_by_activation else 1.0
    std = math.sqrt(gain / spec.fan_in)
    weight = (rng.standard_normal(spec.weight_shape) * std).astype(DTYPE)
    bias = np.zeros(spec.out_channels, DTYPE) if spec.bias else None
    return weight, bias


@lru_cache(maxsize=None)
def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


@lru_cache(maxsize=None)
def dft_kernel(fft_size):
    """Windowed real-DFT basis as conv weights, shape (2*(F/2+1), 1, F).

    Rows ``[0, F/2]`` give the real part, the rest the imaginary part.  Tap
    ``n`` of a frame multiplies the ``n``-th oldest sample of that frame.
    """
    nb = fft_size // 2 + 1
    n = np.arange(fft_size)
    k = np.arange(nb)[:, None]
    phase = 2 * np.pi * k * n / fft_size
    w = hann(fft_size)
    basis = np.concatenate([w * np.cos(phase), -w * np.sin(phase)], axis=0)
    basis = basis[:, None, :].astype(DTYPE)
    basis.flags.writeable = False
    return basis


def stft_spec(fft_size, hop):
    if fft_size < 1 or fft_size & (fft_size - 1):
        raise ConfigurationError(f"fft_size must be a power of two, got {fft_size}")
    if hop < 1 or hop > fft_size:
        raise ConfigurationError(f"hop must be in [1, fft_size], got {hop}")
    return LayerSpec("conv", 1, 2 * (fft_size // 2 + 1), fft_size, hop, causal=True, bias=False)


def causal_stft(x, fft_size, hop, history=None, tile=DEFAULT_TILE):
    """Complex STFT whose frame ``t`` covers samples ``(t*hop - F, t*hop]``.

    Returns complex64 of shape (B, F/2+1, frames).
    """
    spec = stft_spec(fft_size, hop)
    out = conv1d_forward(x, spec, dft_kernel(fft_size), None, history, tile)
    nb = fft_size // 2 + 1
    return (out[:, :nb] + 1j * out[:, nb:]).astype(np.complex64)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, np.float64) / 2595.0) - 1.0)


def mel_filterbank(fft_size, n_mels, sample_rate, fmin=0.0, fmax=None):
    """Triangular filters on the HTK mel scale, shape (n_mels, F/2+1).

    Raises ConfigurationError when any filter misses every FFT bin.
    """
    if n_mels < 1:
        raise ConfigurationError("n_mels must be >= 1")
    fmax = sample_rate / 2 if fmax is None else fmax
    bins = np.linspace(0, sample_rate / 2, fft_size // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - bins[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    empty = np.flatnonzero(fb.max(axis=1) <= 0)
    if empty.size:
        raise ConfigurationError(
            f"{empty.size} of {n_mels} mel filters are empty for fft_size={fft_size}"
        )
    return fb.astype(DTYPE)

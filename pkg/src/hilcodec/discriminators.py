"""Forward passes of the filter-bank and spectrogram discriminators.

Weights are randomly initialised; nothing here trains.  Both discriminators
return one :class:`DiscriminatorOutput` per sub-discriminator.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import core
from .core import LayerSpec, as_tensor3
from .errors import ConfigurationError
from .filterbank import BAND_COUNTS, design_pqmf, pqmf_analyze


@dataclass
class DiscriminatorOutput:
    logits: np.ndarray
    features: list


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x).astype(np.float32)


@dataclass(frozen=True)
class MfbdConfig:
    band_counts: tuple = BAND_COUNTS
    channels: tuple = (32, 128, 512, 1024)
    kernel: int = 5
    stride: int = 3
    post_channels: int = 1024
    post_kernel: int = 5
    out_kernel: int = 3
    slope: float = 0.1

    def layer_specs(self):
        specs = []
        c_in = 1
        for c in self.channels:
            specs.append(LayerSpec("conv", c_in, c, self.kernel, self.stride, causal=False))
            c_in = c
        specs.append(LayerSpec("conv", c_in, self.post_channels, self.post_kernel, causal=False))
        specs.append(LayerSpec("conv", self.post_channels, 1, self.out_kernel, causal=False))
        return specs


def _he_init(specs, rng):
    params = []
    for s in specs:
        w, b = core.init_layer(s, True, rng)
        params.append((w, b))
    return params


class MultiFilterBankDiscriminator:
    """One shared 1-D conv stack applied to every sub-band of every bank."""

    def __init__(self, config=None, rng=None):
        self.config = config or MfbdConfig()
        self.specs = self.config.layer_specs()
        self.params = _he_init(self.specs, rng or np.random.default_rng(0))
        self.banks = {n: design_pqmf(n) for n in self.config.band_counts}

    def sub_forward(self, bands):
        """Shared stack on (B, N, T) sub-bands, each band treated as its own item."""
        B, N, T = bands.shape
        x = bands.reshape(B * N, 1, T).astype(np.float32)
        feats = []
        for i, (spec, (w, b)) in enumerate(zip(self.specs, self.params)):
            x = core.conv1d_forward(x, spec, w, b)
            if i < len(self.specs) - 1:
                x = leaky_relu(x, self.config.slope)
            feats.append(x.reshape(B, N, x.shape[1], x.shape[2]))
        return DiscriminatorOutput(x.reshape(B, N, x.shape[2]), feats)

    def __call__(self, wave):
        wave = as_tensor3(wave, "wave")
        outs = []
        for n in self.config.band_counts:
            outs.append(self.sub_forward(pqmf_analyze(wave, self.banks[n])))
        return outs


def conv2d_forward(x, weight, bias, stride, padding):
    """2-D convolution by im2col; x (B, C, H, W), weight (O, C, kh, kw)."""
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ConfigurationError(f"expected {Ci} input channels, got {C}")
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (Ho - 1) * sh + 1 : sh, : (Wo - 1) * sw + 1 : sw]  # B C Ho Wo kh kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho * Wo, C * kh * kw)
    y = cols @ weight.reshape(O, -1).T + bias
    return y.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2).astype(np.float32)


@dataclass(frozen=True)
class MrsdConfig:
    fft_sizes: tuple = (128, 256, 512, 1024)
    hops: tuple = (32, 64, 128, 256)
    channels: tuple = (16, 16, 32, 64, 128, 1)
    kernel: tuple = (3, 9)
    stride: tuple = (1, 2)
    last_kernel: tuple = (3, 3)
    slope: float = 0.2


class MultiResolutionSpectrogramDiscriminator:
    """2-D conv stacks over (real, imaginary) STFTs at several resolutions."""

    def __init__(self, config=None, rng=None):
        self.config = cfg = config or MrsdConfig()
        rng = rng or np.random.default_rng(0)
        self.params = []
        for _ in cfg.fft_sizes:
            layers = []
            c_in = 2
            for i, c in enumerate(cfg.channels):
                last = i == len(cfg.channels) - 1
                kh, kw = cfg.last_kernel if last else cfg.kernel
                stride = (1, 1) if last else cfg.stride
                std = math.sqrt(2.0 / (c_in * kh * kw))
                w = (rng.standard_normal((c, c_in, kh, kw)) * std).astype(np.float32)
                layers.append((w, np.zeros(c, np.float32), stride, (kh // 2, kw // 2)))
                c_in = c
            self.params.append(layers)

    @staticmethod
    def spectrogram(wave, fft_size, hop):
        """Centered complex STFT as (B, 2, frames, bins)."""
        x = as_tensor3(wave, "wave")[:, 0].astype(np.float64)
        pad = fft_size // 2
        x = np.pad(x, ((0, 0), (pad, pad)))
        frames = np.lib.stride_tricks.sliding_window_view(x, fft_size, axis=-1)[:, ::hop]
        spec = np.fft.rfft(frames * core.hann(fft_size), axis=-1)
        return np.stack([spec.real, spec.imag], axis=1).astype(np.float32)

    def __call__(self, wave):
        outs = []
        for fft_size, hop, layers in zip(self.config.fft_sizes, self.config.hops, self.params):
            x = self.spectrogram(wave, fft_size, hop)
            feats = []
            for i, (w, b, stride, pad) in enumerate(layers):
                x = conv2d_forward(x, w, b, stride, pad)
                if i < len(layers) - 1:
                    x = leaky_relu(x, self.config.slope)
                feats.append(x)
            outs.append(DiscriminatorOutput(x, feats))
        return outs

"""HILCodec encoder and decoder graphs.

The encoder is ``conv0 -> 4 x [spectrogram block, residual blocks,
downsample] -> quantization block -> L2 normalisation``; the decoder mirrors
it with transposed depthwise convolutions for upsampling.  All layers are
causal, so the same code runs offline (``state=None``) and in streaming mode
(``state`` is a dict of per-layer histories).
"""

from dataclasses import dataclass, field, replace
import logging
import math
from typing import Callable, Optional

import numpy as np

from . import core
from .core import DTYPE, LayerSpec, as_tensor3
from .errors import ConfigurationError

log = logging.getLogger(__name__)

HOP = 320
L2_EPS = 1e-12
LOG_EPS = 1e-5


@dataclass(frozen=True)
class GeneratorConfig:
    sample_rate: int = 24000
    strides: tuple = (2, 4, 5, 8)
    enc_channels: int = 64
    dec_channels: int = 96
    enc_blocks: int = 3
    dec_blocks: int = 3
    latent_dim: int = 128
    spec_hops: tuple = (1, 2, 8, 40, 320)
    spec_fft: tuple = (64, 128, 256, 512, 1024)
    first_kernel: int = 7
    last_kernel: int = 7
    res_kernel: int = 3
    res_dilation: int = 1
    quant_kernel: int = 3
    down_kernel_ratio: int = 2
    vcd: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(self.strides))
        object.__setattr__(self, "spec_hops", tuple(self.spec_hops))
        object.__setattr__(self, "spec_fft", tuple(self.spec_fft))
        if len(self.spec_hops) != len(self.strides) + 1 or len(self.spec_fft) != len(self.spec_hops):
            raise ConfigurationError("need one spectrogram resolution per encoder block plus one")
        cumulative = tuple(int(np.prod(self.strides[:i])) for i in range(len(self.strides) + 1))
        if cumulative != self.spec_hops:
            raise ConfigurationError(
                f"spectrogram hops {self.spec_hops} must equal cumulative strides {cumulative}"
            )
        if self.enc_blocks < 1 or self.dec_blocks < 1:
            raise ConfigurationError("enc_blocks and dec_blocks must be >= 1")

    @property
    def hop(self):
        return int(np.prod(self.strides))

    @property
    def frame_rate(self):
        return self.sample_rate / self.hop

    def enc_width(self, i):
        return self.enc_channels * 2**i

    def dec_width(self, j):
        # input width of decoder block j
        return self.dec_channels * 2 ** (len(self.strides) - j)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class VcdScalars:
    """Fixed scalars of one encoder/decoder block with ``n_blocks`` residual-type blocks."""

    n_blocks: int
    enabled: bool = True

    @property
    def alpha(self):
        return 1.0 / math.sqrt(self.n_blocks) if self.enabled else 1.0

    def beta(self, n):
        return math.sqrt(1.0 + n / self.n_blocks) if self.enabled else 1.0

    @property
    def downsample_divisor(self):
        return self.beta(self.n_blocks)


@dataclass
class NormStats:
    waveform_mean: float
    waveform_std: float
    spec_mean: list
    spec_std: list

    def __post_init__(self):
        self.spec_mean = [np.asarray(m, DTYPE) for m in self.spec_mean]
        self.spec_std = [np.asarray(s, DTYPE) for s in self.spec_std]
        if self.waveform_std <= 0 or any(np.any(s <= 0) for s in self.spec_std):
            raise ConfigurationError("normalisation std values must be > 0")

    @classmethod
    def identity(cls, config):
        bins = [f // 2 + 1 for f in config.spec_fft]
        return cls(0.0, 1.0, [np.zeros(b) for b in bins], [np.ones(b) for b in bins])

    def to_dict(self):
        return {
            "waveform_mean": float(self.waveform_mean),
            "waveform_std": float(self.waveform_std),
            "spec_mean": [m.astype(float).tolist() for m in self.spec_mean],
            "spec_std": [s.astype(float).tolist() for s in self.spec_std],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["waveform_mean"], d["waveform_std"], d["spec_mean"], d["spec_std"])


def _log_magnitude_frames(chunk, fft_size, hop):
    # frames that lie fully inside the chunk, same window/phase as causal_stft
    frames = np.lib.stride_tricks.sliding_window_view(chunk, fft_size)[::hop]
    spec = np.fft.rfft(frames * core.hann(fft_size), axis=-1)
    return np.log(np.abs(spec) + LOG_EPS)


def compute_norm_stats(corpus, n_chunks=10000, config=None, chunk_length=4800, seed=0):
    """Waveform and per-bin log-magnitude statistics of randomly drawn chunks.

    ``corpus`` is a sequence of 1-D sample arrays.  Files shorter than
    ``chunk_length`` are skipped.
    """
    config = config or GeneratorConfig()
    pool = [np.asarray(a, np.float64).reshape(-1) for a in corpus]
    pool = [a for a in pool if a.size >= chunk_length]
    if not pool:
        raise ConfigurationError(f"corpus has no item with at least {chunk_length} samples")
    rng = np.random.default_rng(seed)
    n_res = len(config.spec_fft)
    w_sum = w_sq = 0.0
    w_n = 0
    s_sum = [np.zeros(f // 2 + 1) for f in config.spec_fft]
    s_sq = [np.zeros(f // 2 + 1) for f in config.spec_fft]
    s_n = [0] * n_res
    for _ in range(n_chunks):
        item = pool[rng.integers(len(pool))]
        start = rng.integers(item.size - chunk_length + 1)
        chunk = item[start : start + chunk_length]
        w_sum += chunk.sum()
        w_sq += (chunk**2).sum()
        w_n += chunk.size
        for r, (fft_size, hop) in enumerate(zip(config.spec_fft, config.spec_hops)):
            lm = _log_magnitude_frames(chunk, fft_size, hop)
            s_sum[r] += lm.sum(axis=0)
            s_sq[r] += (lm**2).sum(axis=0)
            s_n[r] += lm.shape[0]
    mean = w_sum / w_n
    std = math.sqrt(max(w_sq / w_n - mean**2, 0.0))
    if std == 0.0:
        raise ConfigurationError("corpus waveform has zero standard deviation")
    spec_mean = [s / n for s, n in zip(s_sum, s_n)]
    spec_std = [np.sqrt(np.maximum(q / n - m**2, 0.0)) for q, n, m in zip(s_sq, s_n, spec_mean)]
    if any(np.any(s == 0) for s in spec_std):
        raise ConfigurationError("corpus spectrogram has a zero-variance bin")
    return NormStats(mean, std, spec_mean, spec_std)


# ---------------------------------------------------------------------------
# layers


def _tile_for(config, frames_hop):
    """BLAS tile for a layer running at ``frames_hop`` frames per 320-sample hop."""
    return math.gcd(core.DEFAULT_TILE, max(int(frames_hop), 1))


class Conv:
    """A convolution with folded weights and its own stream history."""

    def __init__(self, name, spec, weight, bias, tile):
        self.name = name
        self.spec = spec
        self.weight = np.ascontiguousarray(weight, DTYPE)
        self.bias = None if bias is None else np.asarray(bias, DTYPE)
        self.tile = tile

    def __call__(self, x, state=None):
        if state is None:
            return core.conv1d_forward(x, self.spec, self.weight, self.bias, tile=self.tile)
        P = self.spec.history
        hist = state.get(self.name)
        if hist is None:
            hist = np.zeros(x.shape[:2] + (P,), DTYPE)
        y = core.conv1d_forward(x, self.spec, self.weight, self.bias, history=hist, tile=self.tile)
        if P:
            state[self.name] = np.concatenate([hist, x], axis=2)[:, :, -P:]
        return y


@dataclass
class LayerPlan:
    """One convolution in the graph, before weights exist."""

    name: str
    spec: LayerSpec
    followed_by_activation: bool
    frames_hop: int
    weight_norm: bool = True
    role: str = "encoder"


def _noop_probe(name, x):
    return None


class Generator:
    """Encoder + decoder graphs with folded weights.

    ``params`` maps names to arrays: ``<layer>.weight_v``, ``<layer>.weight_g``,
    ``<layer>.bias`` and ``<block>.gain`` for every residual-type block.
    """

    def __init__(self, config, params, stats=None):
        self.config = config
        self.stats = stats or NormStats.identity(config)
        self.plan = layer_plan(config)
        missing = [n for n in param_names(config) if n not in params]
        if missing:
            raise ConfigurationError(f"missing parameters: {missing[:5]}")
        self.layers = {}
        for lp in self.plan:
            w = core.fold_weight_norm(params[lp.name + ".weight_v"], params[lp.name + ".weight_g"])
            b = params.get(lp.name + ".bias")
            if w.shape != lp.spec.weight_shape:
                raise ConfigurationError(f"{lp.name}: weight shape {w.shape} != {lp.spec.weight_shape}")
            self.layers[lp.name] = Conv(lp.name, lp.spec, w, b, _tile_for(config, lp.frames_hop))
        self.gains = {n: float(np.asarray(params[n]).reshape(())) for n in gain_names(config)}
        self.enc_vcd = VcdScalars(config.enc_blocks, config.vcd)
        self.dec_vcd = VcdScalars(config.dec_blocks, config.vcd)
        for r, (f, h) in enumerate(zip(config.spec_fft, config.spec_hops)):
            name = f"enc.stft{r}"
            self.layers[name] = Conv(name, core.stft_spec(f, h), core.dft_kernel(f), None,
                                     _tile_for(config, HOP // h))

    # -- building blocks ----------------------------------------------------

    def _scale(self, gain_name, alpha):
        return DTYPE(self.gains[gain_name] * alpha)

    def spectrogram_features(self, wave, r, state=None):
        """Normalised log-magnitude spectrogram at resolution ``r``."""
        nb = self.config.spec_fft[r] // 2 + 1
        out = self.layers[f"enc.stft{r}"](wave, state)
        re, im = out[:, :nb], out[:, nb:]
        logmag = np.log(np.sqrt(re * re + im * im) + DTYPE(LOG_EPS))
        if self.config.vcd:
            m = self.stats.spec_mean[r][None, :, None]
            s = self.stats.spec_std[r][None, :, None]
            logmag = (logmag - m) / s
        return logmag.astype(DTYPE, copy=False)

    def spectrogram_block(self, x, wave, r, prefix, state=None):
        """``y = x + gain * alpha * g(s)``; identity when the gain is zero."""
        gain = prefix + ".gain"
        if self.gains[gain] == 0.0:
            return x
        s = self.spectrogram_features(wave, r, state)
        if s.shape[2] != x.shape[2]:
            raise ConfigurationError(
                f"spectrogram has {s.shape[2]} frames but the block input has {x.shape[2]}"
            )
        g = self.layers[prefix + ".conv"](s, state)
        return x + self._scale(gain, self.enc_vcd.alpha) * g

    def residual_block(self, x, prefix, n, vcd, state=None):
        """Variance-constrained residual block ``x + gain * alpha * f(x / beta_n)``."""
        gain = prefix + ".gain"
        if self.gains[gain] == 0.0:
            return x
        h = x / DTYPE(vcd.beta(n)) if self.config.vcd else x
        h = self.layers[prefix + ".dconv"](core.elu(h), state)
        h = self.layers[prefix + ".pconv"](core.elu(h), state)
        if h.shape != x.shape:
            raise ConfigurationError(f"{prefix}: branch shape {h.shape} != {x.shape}")
        return x + self._scale(gain, vcd.alpha) * h

    # -- graphs ---------------------------------------------------------------

    def encode_latent(self, wave, state=None, probe=None):
        """Waveform (B, 1, T) -> L2-normalised latent (B, latent_dim, T / hop)."""
        cfg = self.config
        probe = probe or _noop_probe
        wave = as_tensor3(wave, "wave")
        if wave.shape[1] != 1:
            raise ConfigurationError("the encoder takes mono input")
        if state is None and wave.shape[2] % cfg.hop:
            keep = wave.shape[2] - wave.shape[2] % cfg.hop
            log.warning("dropping %d trailing samples (not a multiple of %d)", wave.shape[2] - keep, cfg.hop)
            wave = wave[:, :, :keep]
        probe("in", wave)
        x = wave
        if cfg.vcd:
            x = (x - DTYPE(self.stats.waveform_mean)) / DTYPE(self.stats.waveform_std)
        x = self.layers["enc.conv0"](x, state)
        probe("enc.conv0", x)
        vcd = self.enc_vcd
        for i in range(len(cfg.strides)):
            p = f"enc.block{i}"
            x = self.spectrogram_block(x, wave, i, p + ".spec", state)
            probe(p + ".spec", x)
            for n in range(1, cfg.enc_blocks):
                x = self.residual_block(x, f"{p}.res{n}", n, vcd, state)
                probe(f"{p}.res{n}", x)
            if cfg.vcd:
                x = x / DTYPE(vcd.downsample_divisor)
            probe(p + ".down_in", x)
            x = self.layers[p + ".down.pconv"](core.elu(x), state)
            x = self.layers[p + ".down.dconv"](core.elu(x), state)
            probe(p + ".down", x)
        q = len(cfg.strides)
        x = self.spectrogram_block(x, wave, q, "enc.quant.spec", state)
        probe("enc.quant.spec", x)
        x = self.layers["enc.quant.dconv"](core.elu(x), state)
        x = self.layers["enc.quant.pconv"](core.elu(x), state)
        probe("enc.quant.conv", x)
        z = l2_normalize_rescale(x, rescale=cfg.vcd)
        probe("enc.latent", z)
        return z

    def decode_latent(self, zq, state=None, probe=None):
        """Quantised latent (B, latent_dim, F) -> waveform (B, 1, F * hop) in (-1, 1)."""
        cfg = self.config
        probe = probe or _noop_probe
        zq = as_tensor3(zq, "latent")
        if zq.shape[1] != cfg.latent_dim:
            raise ConfigurationError(f"expected {cfg.latent_dim} latent channels, got {zq.shape[1]}")
        probe("dec.in", zq)
        x = self.layers["dec.dequant.pconv"](core.elu(zq), state)
        x = self.layers["dec.dequant.dconv"](core.elu(x), state)
        probe("dec.dequant", x)
        vcd = self.dec_vcd
        for j in range(len(cfg.strides)):
            p = f"dec.block{j}"
            x = self.layers[p + ".up.dconv"](core.elu(x), state)
            x = self.layers[p + ".up.pconv"](core.elu(x), state)
            probe(p + ".up", x)
            for n in range(cfg.dec_blocks):
                x = self.residual_block(x, f"{p}.res{n}", n, vcd, state)
                probe(f"{p}.res{n}", x)
            if cfg.vcd:
                x = x / DTYPE(vcd.downsample_divisor)
                probe(p + ".out", x)
        x = self.layers["dec.conv_out"](core.elu(x), state)
        probe("dec.conv_out", x)
        if cfg.vcd:
            x = x * DTYPE(self.stats.waveform_std) + DTYPE(self.stats.waveform_mean)
        y = core.tanh_clip(x)
        probe("out", y)
        return y


def l2_normalize_rescale(z, rescale=True, eps=L2_EPS):
    """Scale every frame (vector over channels) to norm ``sqrt(C)`` (or 1).

    The squared norm is summed channel by channel in a fixed order so the
    result does not depend on how many frames are processed together.
    """
    z = as_tensor3(z, "z")
    C = z.shape[1]
    sq = z[:, 0] * z[:, 0]
    for c in range(1, C):
        sq = sq + z[:, c] * z[:, c]
    norm = np.maximum(np.sqrt(sq), DTYPE(eps))
    if np.any(sq == 0):
        log.debug("l2_normalize_rescale: %d all-zero frames floored", int((sq == 0).sum()))
    out = z / norm[:, None, :]
    if rescale:
        out = out * DTYPE(math.sqrt(C))
    return out.astype(DTYPE, copy=False)


# ---------------------------------------------------------------------------
# graph description


def layer_plan(config):
    """Every convolution of the generator in forward order."""
    cfg = config
    plans = []
    P = lambda *a, **k: plans.append(LayerPlan(*a, **k))  # noqa: E731
    hops = cfg.spec_hops
    P("enc.conv0", LayerSpec("conv", 1, cfg.enc_channels, cfg.first_kernel), False, HOP)
    for i, s in enumerate(cfg.strides):
        C = cfg.enc_width(i)
        fph = HOP // hops[i]
        p = f"enc.block{i}"
        nb = cfg.spec_fft[i] // 2 + 1
        P(p + ".spec.conv", LayerSpec("pointwise-conv", nb, C), False, fph)
        for n in range(1, cfg.enc_blocks):
            _res_plans(P, f"{p}.res{n}", C, cfg, fph, "encoder")
        P(p + ".down.pconv", LayerSpec("pointwise-conv", C, 2 * C), True, fph)
        P(p + ".down.dconv", LayerSpec("depthwise-conv", 2 * C, 2 * C,
                                       cfg.down_kernel_ratio * s, s), False, fph // s)
    C = cfg.enc_width(len(cfg.strides))
    nb = cfg.spec_fft[-1] // 2 + 1
    P("enc.quant.spec.conv", LayerSpec("pointwise-conv", nb, C), False, 1)
    P("enc.quant.dconv", LayerSpec("depthwise-conv", C, C, cfg.quant_kernel), True, 1)
    P("enc.quant.pconv", LayerSpec("pointwise-conv", C, cfg.latent_dim), False, 1)

    D = cfg.dec_width(0)
    P("dec.dequant.pconv", LayerSpec("pointwise-conv", cfg.latent_dim, D), True, 1, role="decoder")
    P("dec.dequant.dconv", LayerSpec("depthwise-conv", D, D, cfg.quant_kernel), False, 1, role="decoder")
    fph = 1
    for j, s in enumerate(reversed(cfg.strides)):
        C = cfg.dec_width(j)
        p = f"dec.block{j}"
        P(p + ".up.dconv", LayerSpec("transposed-conv", C, C, cfg.down_kernel_ratio * s, s, groups=C),
          True, fph, role="decoder")
        fph *= s
        P(p + ".up.pconv", LayerSpec("pointwise-conv", C, C // 2), False, fph, role="decoder")
        for n in range(cfg.dec_blocks):
            _res_plans(P, f"{p}.res{n}", C // 2, cfg, fph, "decoder")
    P("dec.conv_out", LayerSpec("conv", cfg.dec_channels, 1, cfg.last_kernel), True, HOP, role="decoder")
    return plans


def _res_plans(P, prefix, C, cfg, fph, role):
    P(prefix + ".dconv", LayerSpec("depthwise-conv", C, C, cfg.res_kernel, dilation=cfg.res_dilation),
      True, fph, role=role)
    P(prefix + ".pconv", LayerSpec("pointwise-conv", C, C), False, fph, role=role)


def gain_names(config):
    names = []
    for i in range(len(config.strides)):
        names.append(f"enc.block{i}.spec.gain")
        names += [f"enc.block{i}.res{n}.gain" for n in range(1, config.enc_blocks)]
    names.append("enc.quant.spec.gain")
    for j in range(len(config.strides)):
        names += [f"dec.block{j}.res{n}.gain" for n in range(config.dec_blocks)]
    return names


def param_names(config):
    names = []
    for lp in layer_plan(config):
        names += [lp.name + ".weight_v", lp.name + ".weight_g"]
        if lp.spec.bias:
            names.append(lp.name + ".bias")
    return names + gain_names(config)


def init_params(config, rng, gain=None):
    """Freshly initialised parameters.

    Residual gains are zero unless ``gain`` is given; the baseline
    (``config.vcd`` false) has no zero initialisation and uses gain 1.
    """
    if gain is None:
        gain = 0.0 if config.vcd else 1.0
    params = {}
    for lp in layer_plan(config):
        w, b = core.init_layer(lp.spec, lp.followed_by_activation, rng)
        params[lp.name + ".weight_v"] = w
        params[lp.name + ".weight_g"] = np.sqrt(
            (w.astype(np.float64).reshape(w.shape[0], -1) ** 2).sum(axis=1)
        ).astype(DTYPE)
        if b is not None:
            params[lp.name + ".bias"] = b
    for n in gain_names(config):
        params[n] = np.asarray(gain, DTYPE).reshape(1)
    return params


def count_generator_params(config):
    return sum(lp.spec.n_params() for lp in layer_plan(config)) + len(gain_names(config))

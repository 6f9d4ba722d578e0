"""Signal-propagation measurements, complexity accounting and the 2f-model score."""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .core import DTYPE, as_tensor3, stft_spec
from .errors import ConfigurationError
from .generator import Generator, GeneratorConfig, compute_norm_stats, init_params, layer_plan
from .generator import HOP, count_generator_params

DEFAULT_BATCH = 4
DEFAULT_LENGTH = 8320  # 4 * 8320 >= 2**15 and a multiple of 320
DEFAULT_PREROLL = 6400


def average_channel_variance(x):
    """Variance over batch and time for each channel, averaged over channels."""
    x = as_tensor3(x).astype(np.float64)
    B, C, T = x.shape
    if B * T < 2:
        raise ConfigurationError("need at least two values per channel")
    return float(x.transpose(1, 0, 2).reshape(C, -1).var(axis=1).mean())


@dataclass
class VarianceReport:
    mode: str
    gain_override: bool
    taps: list = field(default_factory=list)

    def as_dict(self):
        return dict(self.taps)

    def value(self, name):
        for n, v in self.taps:
            if n == name:
                return v
        raise KeyError(name)

    def dynamic_range(self):
        """max / min tap variance; infinite when some tap is constant."""
        vals = np.array([v for _, v in self.taps])
        if vals.min() <= 0.0:
            return math.inf
        return float(vals.max() / vals.min())

    def residual_growth(self, config):
        """Geometric mean of the per-residual-block variance ratios."""
        r = np.array(list(self.residual_ratios(config).values()))
        return float(np.exp(np.log(r).mean()))

    def block_ratios(self, config):
        """Terminal/initial variance ratio of every encoder and decoder block."""
        out = {}
        last = config.enc_blocks - 1
        prev = "enc.conv0"
        for i in range(len(config.strides)):
            p = f"enc.block{i}"
            end = f"{p}.res{last}" if last >= 1 else f"{p}.spec"
            out[p] = self.value(end) / self.value(prev)
            prev = p + ".down"
        for j in range(len(config.strides)):
            p = f"dec.block{j}"
            out[p] = self.value(f"{p}.res{config.dec_blocks - 1}") / self.value(p + ".up")
        return out

    def residual_ratios(self, config):
        """Variance ratio across every single residual block."""
        out = {}
        for i in range(len(config.strides)):
            p = f"enc.block{i}"
            for n in range(1, config.enc_blocks):
                before = f"{p}.spec" if n == 1 else f"{p}.res{n - 1}"
                out[f"{p}.res{n}"] = self.value(f"{p}.res{n}") / self.value(before)
        for j in range(len(config.strides)):
            p = f"dec.block{j}"
            for n in range(config.dec_blocks):
                before = f"{p}.up" if n == 0 else f"{p}.res{n - 1}"
                out[f"{p}.res{n}"] = self.value(f"{p}.res{n}") / self.value(before)
        return out

    def to_csv(self):
        lines = [f"# mode={self.mode} gain_override={int(self.gain_override)}", "tap,variance"]
        lines += [f"{n},{v:.9g}" for n, v in self.taps]
        return "\n".join(lines) + "\n"


def mode_config(config, mode):
    if mode not in ("vcd", "baseline"):
        raise ConfigurationError(f"mode must be 'vcd' or 'baseline', got {mode!r}")
    return replace(config, vcd=(mode == "vcd"))


def signal_propagation(config=None, seed=0, mode="vcd", gain_override=False,
                       batch=DEFAULT_BATCH, length=DEFAULT_LENGTH, stats_chunks=256,
                       preroll=DEFAULT_PREROLL):
    """Average channel variance after every block for i.i.d. N(0, 1) input.

    The latent is passed to the decoder unquantized (tap ``Q``).  In vcd mode
    the spectrogram statistics are estimated from the same noise process.
    ``preroll`` samples of the same noise are pushed through the stream
    caches first, so the zero-padded start of the causal STFTs does not enter
    the measurement.
    """
    config = mode_config(config or GeneratorConfig(), mode)
    rng = np.random.default_rng(seed)
    gain = 1.0 if (gain_override or mode == "baseline") else 0.0
    params = init_params(config, rng, gain=gain)
    wave = rng.standard_normal((batch, 1, preroll + length)).astype(DTYPE)
    stats = None
    if mode == "vcd":
        noise = [rng.standard_normal(48000) for _ in range(4)]
        stats = compute_norm_stats(noise, n_chunks=stats_chunks, config=config, seed=seed)
    gen = Generator(config, params, stats)
    report = VarianceReport(mode, gain_override)
    rename = {"in": "In", "enc.latent": "Q", "out": "Out"}

    def probe(name, x):
        if name == "dec.in":
            return
        report.taps.append((rename.get(name, name), average_channel_variance(x)))

    enc_state, dec_state = {}, {}
    if preroll:
        gen.decode_latent(gen.encode_latent(wave[:, :, :preroll], enc_state), dec_state)
    z = gen.encode_latent(wave[:, :, preroll:], enc_state, probe=probe)
    gen.decode_latent(z, dec_state, probe=probe)
    return report


def depth_sweep(config=None, depths=range(1, 9), mode="vcd", seed=0, gain_override=True, **kw):
    """Dynamic range of the variance profile for 1..8 residual blocks per stage.

    Depth ``d`` means ``d`` residual blocks in every encoder block (plus its
    spectrogram block) and ``d`` residual blocks in every decoder block.
    Returns a list of ``(d, dynamic_range)``.
    """
    base = config or GeneratorConfig()
    rows = []
    for d in depths:
        cfg = replace(base, enc_blocks=d + 1, dec_blocks=d)
        rep = signal_propagation(cfg, seed, mode, gain_override, **kw)
        rows.append((d, rep.dynamic_range()))
    return rows


def sweep_growth_factor(rows):
    """Geometric growth of the dynamic range per added block.

    ``exp`` of the least-squares slope of ``log(range)`` against depth over
    the finite entries; infinite entries (a collapsed tap) are left out of
    the fit.
    """
    pts = [(d, math.log(r)) for d, r in rows if math.isfinite(r)]
    if len(pts) < 2:
        raise ConfigurationError("need at least two finite sweep entries")
    d, y = np.array(pts).T
    slope = np.polyfit(d, y, 1)[0]
    return float(math.exp(slope))


@dataclass
class ComplexityReport:
    params_generator: int
    params_codebooks: int
    mac_encoder: int
    mac_decoder: int
    mac_quantizer: int
    mac_stft: int

    @property
    def params(self):
        return self.params_generator + self.params_codebooks

    @property
    def mac_encode(self):
        return self.mac_encoder + self.mac_quantizer

    @property
    def mac_decode(self):
        return self.mac_decoder

    def rows(self):
        return [
            ("params", self.params),
            ("params_generator", self.params_generator),
            ("params_codebooks", self.params_codebooks),
            ("mac_encode", self.mac_encode),
            ("mac_decode", self.mac_decode),
            ("mac_encoder", self.mac_encoder),
            ("mac_quantizer", self.mac_quantizer),
            ("mac_decoder", self.mac_decoder),
            ("mac_stft", self.mac_stft),
        ]

    def to_csv(self):
        return "metric,value\n" + "".join(f"{k},{v}\n" for k, v in self.rows())


def layer_macs(config, seconds=1.0):
    """(name, role, MACs) for every generator convolution over ``seconds`` of audio."""
    samples = int(round(seconds * config.sample_rate))
    rows = []
    for lp in layer_plan(config):
        t_out = samples * lp.frames_hop // HOP
        if lp.spec.kind == "transposed-conv":
            # frames_hop is the input rate of an upsampler
            t_out *= lp.spec.stride
        rows.append((lp.name, lp.spec, lp.role, lp.spec.macs(t_out)))
    return rows


def count_complexity(config=None, stages=12, entries=1024, nq=None, seconds=1.0):
    """Exact parameter and per-``seconds`` multiply-add counts.

    The fixed windowed-DFT convolutions of the spectrogram blocks are
    reported separately in ``mac_stft`` and not included in ``mac_encode``.
    """
    config = config or GeneratorConfig()
    nq = stages if nq is None else nq
    enc = dec = 0
    for _, _, role, m in layer_macs(config, seconds):
        if role == "encoder":
            enc += m
        else:
            dec += m
    samples = int(round(seconds * config.sample_rate))
    frames = samples // config.hop
    stft = 0
    for f, h in zip(config.spec_fft, config.spec_hops):
        stft += stft_spec(f, h).macs(samples // h)
    return ComplexityReport(
        params_generator=count_generator_params(config),
        params_codebooks=stages * entries * config.latent_dim,
        mac_encoder=enc,
        mac_decoder=dec,
        mac_quantizer=nq * entries * config.latent_dim * frames,
        mac_stft=stft,
    )


def two_f_model_score(avg_mod_diff1, adb):
    """2f-model quality score clamped to [0, 100]."""
    raw = 56.1345 / (1.0 + (-0.0282 * avg_mod_diff1 - 0.8628) ** 2) - 27.1451 * adb + 86.3515
    return max(min(raw, 100.0), 0.0)

"""Loss values and the gradient-norm loss balancer.

Nothing here differentiates: gradients passed to the balancer are produced
by the caller.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import core
from .errors import ConfigurationError

FM_EPS = 1e-8
BALANCER_EPS = 1e-12
LOG_EPS = 1e-5


@dataclass(frozen=True)
class MelLossConfig:
    sample_rate: int = 24000
    n_mels: tuple = (6, 12, 23, 45, 88, 128)

    @property
    def resolutions(self):
        """(fft_size, hop, n_mels) for i = 1..6."""
        return [(2 ** (i + 4), 2 ** (i + 2), m) for i, m in enumerate(self.n_mels, start=1)]


@lru_cache(maxsize=None)
def _mel_bank(fft_size, n_mels, sample_rate):
    return core.mel_filterbank(fft_size, n_mels, sample_rate).astype(np.float64)


def log_mel(x, fft_size, hop, n_mels, sample_rate=24000):
    """Log mel magnitude of a centered Hann STFT, shape (B, frames, n_mels)."""
    x = core.as_tensor3(x)[:, 0].astype(np.float64)
    pad = fft_size // 2
    x = np.pad(x, ((0, 0), (pad, pad)), mode="reflect" if x.shape[1] > pad else "constant")
    frames = np.lib.stride_tricks.sliding_window_view(x, fft_size, axis=-1)[:, ::hop]
    mag = np.abs(np.fft.rfft(frames * core.hann(fft_size), axis=-1))
    return np.log(mag @ _mel_bank(fft_size, n_mels, sample_rate).T + LOG_EPS)


def reconstruction_loss(x, x_hat, config=None):
    """Sum over resolutions of mean |dS| + mean dS^2 between log mel spectrograms."""
    config = config or MelLossConfig()
    x = np.asarray(x)
    x_hat = np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise ConfigurationError(f"length mismatch {x.shape} vs {x_hat.shape}")
    total = 0.0
    for fft_size, hop, n_mels in config.resolutions:
        d = log_mel(x, fft_size, hop, n_mels, config.sample_rate) - log_mel(
            x_hat, fft_size, hop, n_mels, config.sample_rate
        )
        total += float(np.mean(np.abs(d)) + np.mean(d**2))
    return total


def _logits(outputs):
    return [np.asarray(getattr(o, "logits", o), np.float64) for o in outputs]


def gan_generator_loss(fake_outputs):
    return float(sum(np.mean(np.maximum(0.0, 1.0 - d)) for d in _logits(fake_outputs)))


def gan_discriminator_loss(real_outputs, fake_outputs):
    real, fake = _logits(real_outputs), _logits(fake_outputs)
    if len(real) != len(fake):
        raise ConfigurationError("need one real and one fake output per discriminator")
    return float(
        sum(np.mean(np.maximum(0.0, 1.0 - r)) + np.mean(np.maximum(0.0, 1.0 + f)) for r, f in zip(real, fake))
    )


def feature_matching_loss(real_features, fake_features):
    """Sum over discriminators and layers of mean|a - b| / mean|a|.

    Arguments are lists (one per discriminator) of lists of layer arrays.
    """
    if len(real_features) != len(fake_features):
        raise ConfigurationError("discriminator counts differ")
    total = 0.0
    for rj, fj in zip(real_features, fake_features):
        if len(rj) != len(fj):
            raise ConfigurationError("layer counts differ")
        for a, b in zip(rj, fj):
            a = np.asarray(a, np.float64)
            b = np.asarray(b, np.float64)
            total += float(np.mean(np.abs(a - b)) / max(np.mean(np.abs(a)), FM_EPS))
    return total


@dataclass
class BalancerState:
    lambdas: dict
    decay: float = 0.999
    ema_norms: dict = field(default_factory=dict)
    lambda_c: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ConfigurationError("decay must lie in (0, 1)")


def balancer_combine(grads, state, commitment=None):
    """Combine per-loss gradients as ``sum_i lambda_i g_i / ema_i``.

    ``grads`` maps loss names to arrays of identical shape.  A loss seen for
    the first time starts its EMA at its current norm.  The commitment term is
    not balanced; when given it is returned scaled by ``lambda_c`` as the
    second element.
    """
    names = list(grads)
    if not names:
        raise ConfigurationError("no gradients given")
    shape = np.shape(grads[names[0]])
    combined = np.zeros(shape)
    for name in names:
        g = np.asarray(grads[name], np.float64)
        if g.shape != shape:
            raise ConfigurationError(f"gradient {name!r} has shape {g.shape}, expected {shape}")
        norm = float(np.sqrt(np.sum(g * g)))
        prev = state.ema_norms.get(name)
        ema = norm if prev is None else state.decay * prev + (1 - state.decay) * norm
        state.ema_norms[name] = ema
        combined += state.lambdas.get(name, 1.0) * g / max(ema, BALANCER_EPS)
    extra = None if commitment is None else state.lambda_c * np.asarray(commitment, np.float64)
    return combined, extra

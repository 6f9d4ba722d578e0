"""PQMF filter banks, downsampling frontends and aliasing measurements."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import optimize, signal

from .core import as_tensor3
from .errors import ConfigurationError

KAISER_BETA = 9.0
BAND_COUNTS = (1, 2, 3, 5, 7, 11)


@dataclass(frozen=True)
class PqmfBank:
    n_bands: int
    prototype: np.ndarray
    analysis_filters: np.ndarray
    synthesis_filters: np.ndarray
    cutoff: float

    @property
    def taps(self):
        return self.prototype.size

    @property
    def delay(self):
        """Round-trip delay in samples."""
        return self.taps - 1 if self.n_bands > 1 else 0


def _cosine_modulate(prototype, n_bands):
    L = prototype.size
    n = np.arange(L) - (L - 1) / 2
    k = np.arange(n_bands)[:, None]
    phase = (-1.0) ** k * np.pi / 4
    arg = (2 * k + 1) * (np.pi / (2 * n_bands)) * n
    h = 2 * prototype * np.cos(arg + phase)
    g = 2 * prototype * np.cos(arg - phase)
    return h, g


def _prototype(taps, cutoff):
    return signal.firwin(taps, cutoff, window=("kaiser", KAISER_BETA), fs=1.0)


def _reconstruction_error(cutoff, taps, n_bands):
    # analysis + synthesis is periodically time-varying with period N, so
    # impulses at every phase give the complete round-trip response
    p = _prototype(taps, cutoff)
    h, g = _cosine_modulate(p, n_bands)
    bank = PqmfBank(n_bands, p, h, g, cutoff)
    length = 4 * taps
    length -= length % n_bands
    err = 0.0
    for phase in range(n_bands):
        x = np.zeros(length)
        x[taps + phase] = 1.0
        y = pqmf_synthesize(pqmf_analyze(x, bank), bank)[0, 0]
        target = np.zeros(length)
        target[taps + phase + bank.delay] = 1.0
        err += float(np.sum((y - target) ** 2))
    return err


def design_pqmf(n_bands, taps=None):
    """Kaiser-window PQMF bank with a grid-searched prototype cutoff.

    ``taps`` defaults to ``16 * n_bands``.  ``n_bands == 1`` gives the
    identity bank.
    """
    if n_bands < 1:
        raise ConfigurationError("n_bands must be >= 1")
    if n_bands == 1:
        one = np.ones(1)
        return PqmfBank(1, one, one[None], one[None], 1.0)
    taps = 16 * n_bands if taps is None else int(taps)
    if taps < 2 * n_bands:
        raise ConfigurationError(f"need at least {2 * n_bands} taps for {n_bands} bands, got {taps}")
    nominal = 0.5 / (2 * n_bands)
    grid = np.linspace(0.8 * nominal, 1.2 * nominal, 81)
    errs = [_reconstruction_error(c, taps, n_bands) for c in grid]
    i = int(np.argmin(errs))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(
        _reconstruction_error, bounds=(lo, hi), args=(taps, n_bands), method="bounded",
        options={"xatol": 1e-10},
    )
    cutoff = float(res.x) if res.fun <= errs[i] else float(grid[i])
    p = _prototype(taps, cutoff)
    h, g = _cosine_modulate(p, n_bands)
    return PqmfBank(n_bands, p, h, g, cutoff)


def pqmf_analyze(wave, bank):
    """(B, 1, T) -> (B, N, ceil(T / N)): causal band filtering then decimation."""
    x = as_tensor3(wave, "wave").astype(np.float64)
    if x.shape[1] != 1:
        raise ConfigurationError("pqmf_analyze takes mono input")
    N = bank.n_bands
    if N == 1:
        return x.copy()
    T = x.shape[2]
    out = np.stack([signal.lfilter(h, [1.0], x[:, 0], axis=-1) for h in bank.analysis_filters], axis=1)
    return out[:, :, ::N][:, :, : -(-T // N)]


def pqmf_synthesize(subbands, bank):
    """(B, N, F) -> (B, 1, F * N): zero-insert upsampling then synthesis filtering."""
    s = np.asarray(subbands, np.float64)
    if s.ndim != 3 or s.shape[1] != bank.n_bands:
        raise ConfigurationError(f"expected {bank.n_bands} sub-band channels, got shape {s.shape}")
    N = bank.n_bands
    if N == 1:
        return s.copy()
    B, _, F = s.shape
    up = np.zeros((B, N, F * N))
    up[:, :, ::N] = s
    y = sum(signal.lfilter(N * bank.synthesis_filters[k], [1.0], up[:, k], axis=-1) for k in range(N))
    return y[:, None, :]


def reconstruction_snr(bank, x):
    """SNR (dB) of analysis + synthesis against the delayed input."""
    x = np.asarray(x, np.float64).reshape(-1)
    T = x.size - x.size % bank.n_bands
    x = x[:T]
    y = pqmf_synthesize(pqmf_analyze(x, bank), bank)[0, 0]
    d = bank.delay
    ref, est = x[: T - d], y[d:T]
    # ignore the start-up transient
    ref, est = ref[bank.taps :], est[bank.taps :]
    err = np.sum((ref - est) ** 2)
    return math.inf if err == 0 else 10 * math.log10(np.sum(ref**2) / err)


def avgpool_response(taps, freqs, floor_db=-300.0):
    """Magnitude (dB, 0 at DC) of a ``taps``-point moving average at ``freqs`` (cycles/sample)."""
    if taps < 1:
        raise ConfigurationError("taps must be >= 1")
    f = np.asarray(freqs, np.float64)
    w = 2 * np.pi * f
    num = np.sin(w * taps / 2)
    den = taps * np.sin(w / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        mag = np.where(np.abs(den) < 1e-15, 1.0, np.abs(num / den))
        db = 20 * np.log10(mag)
    return np.maximum(db, floor_db)


def first_sidelobe_db(taps, n_grid=200001):
    """Highest response between the first null and Nyquist."""
    f = np.linspace(0.0, 0.5, n_grid)
    db = avgpool_response(taps, f)
    stop = f > 1.0 / taps
    return float(db[stop].max())


def standard_sweep(n=2**15, f0=0.0, f1=0.5):
    """Linear chirp over ``[f0, f1]`` cycles/sample with unit amplitude."""
    t = np.arange(n)
    return np.cos(2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * n)))


def _frontend(x, factor, frontend, bank=None):
    if frontend == "plain":
        return x
    if frontend == "avgpool":
        return signal.lfilter(np.ones(factor) / factor, [1.0], x)
    if frontend == "pqmf":
        bank = bank or design_pqmf(factor)
        return signal.lfilter(bank.analysis_filters[0], [1.0], x)
    raise ConfigurationError(f"unknown frontend {frontend!r}")


def alias_energy(wave, factor, frontend, bank=None):
    """Fraction of the input energy that folds below the new Nyquist.

    The filtered signal is split by an ideal FFT brick-wall into the part
    below ``0.5 / factor`` and the part above it.  Only the part above
    aliases; its energy after decimation (rescaled by ``factor``) is
    reported relative to the input energy.
    """
    x = np.asarray(wave, np.float64).reshape(-1)
    if factor < 2:
        return 0.0
    y = _frontend(x, factor, frontend, bank)
    spec = np.fft.rfft(y)
    freqs = np.fft.rfftfreq(y.size)
    high = np.fft.irfft(np.where(freqs > 0.5 / factor, spec, 0), n=y.size)
    aliased = factor * np.sum(high[::factor] ** 2)
    return float(aliased / np.sum(x**2))


def band_edges(n_bands):
    """Band edges (cycles/sample) of an ``n_bands`` uniform bank, inner edges only."""
    return np.arange(1, n_bands) / (2.0 * n_bands)


def transition_coverage(band_counts=BAND_COUNTS, margin=0.1):
    """For every inner band edge of every N, the band counts that keep it clear.

    An edge of bank N is covered by bank M != N when its distance to every
    edge of M (0 and 0.5 included) is at least ``margin`` of M's band width.
    Returns a list of ``(N, edge, [covering M, ...])``.
    """
    rows = []
    for n in band_counts:
        for e in band_edges(n):
            covering = []
            for m in band_counts:
                if m == n:
                    continue
                width = 0.5 / m
                edges_m = np.arange(m + 1) * width
                if np.min(np.abs(edges_m - e)) >= margin * width - 1e-12:
                    covering.append(m)
            rows.append((n, float(e), covering))
    return rows

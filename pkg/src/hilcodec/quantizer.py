"""Residual vector quantizer: k-means init, EMA updates, dead-code reinit."""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .core import DTYPE, tiled_matmul
from .errors import ConfigurationError, CorruptStreamError

log = logging.getLogger(__name__)

EMA_EPS = 1e-5
DEAD_THRESHOLD = 0.5


@dataclass
class Codebooks:
    """RVQ state: ``vectors`` (stages, K, dim) plus EMA statistics."""

    vectors: np.ndarray
    usage_ema: np.ndarray = None
    cluster_sum_ema: np.ndarray = None
    decay: float = 0.99

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, DTYPE)
        if self.vectors.ndim != 3:
            raise ConfigurationError("codebook vectors must have shape (stages, entries, dim)")
        S, K, D = self.vectors.shape
        if self.usage_ema is None:
            self.usage_ema = np.ones((S, K))
        if self.cluster_sum_ema is None:
            self.cluster_sum_ema = self.vectors.astype(np.float64) * self.usage_ema[..., None]
        self.usage_ema = np.asarray(self.usage_ema, np.float64)
        self.cluster_sum_ema = np.asarray(self.cluster_sum_ema, np.float64)
        if self.usage_ema.shape != (S, K) or self.cluster_sum_ema.shape != (S, K, D):
            raise ConfigurationError("EMA statistics do not match the codebook shape")
        if not 0.0 < self.decay < 1.0:
            raise ConfigurationError("decay must lie in (0, 1)")

    @property
    def stages(self):
        return self.vectors.shape[0]

    @property
    def entries(self):
        return self.vectors.shape[1]

    @property
    def dim(self):
        return self.vectors.shape[2]

    @property
    def codebook_bits(self):
        return max(1, math.ceil(math.log2(self.entries)))

    @classmethod
    def random(cls, stages=12, entries=1024, dim=128, rng=None, decay=0.99):
        rng = rng or np.random.default_rng(0)
        return cls(rng.standard_normal((stages, entries, dim)).astype(DTYPE), decay=decay)

    def copy(self):
        return Codebooks(self.vectors.copy(), self.usage_ema.copy(), self.cluster_sum_ema.copy(), self.decay)


def squared_distances(frames, book):
    """``||f - c||^2`` for frames (M, D) against entries (K, D), shape (M, K).

    Computed per frame with a fixed-shape product, so a frame's row does not
    depend on which other frames are in the batch.
    """
    frames = np.asarray(frames, DTYPE)
    book = np.asarray(book, DTYPE)
    cross = tiled_matmul(book, frames.T[None], tile=1)[0].T  # (M, K)
    f2 = (frames * frames).sum(axis=1, keepdims=True)
    c2 = (book * book).sum(axis=1)[None, :]
    return f2 - 2 * cross + c2


def nearest(frames, book):
    """Index of the closest entry per frame; ties go to the lowest index."""
    return np.argmin(squared_distances(frames, book), axis=1)


def kmeans_init(features, K, iters=10, rng=None, return_sse=False):
    """k-means++ seeding followed by Lloyd iterations.

    Returns centroids (K, D), plus the per-iteration SSE list when asked.
    Empty clusters are reseeded from random data points.
    """
    x = np.asarray(features, np.float64)
    if x.ndim == 1:
        x = x[:, None]
    M = x.shape[0]
    if M < K:
        raise ConfigurationError(f"k-means needs at least K={K} features, got {M}")
    rng = rng or np.random.default_rng(0)
    centroids = np.empty((K, x.shape[1]))
    centroids[0] = x[rng.integers(M)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = d2.sum()
        i = rng.choice(M, p=d2 / total) if total > 0 else rng.integers(M)
        centroids[k] = x[i]
        d2 = np.minimum(d2, ((x - centroids[k]) ** 2).sum(axis=1))
    sse = []
    for _ in range(iters):
        dist = _sq_dist64(x, centroids)
        assign = np.argmin(dist, axis=1)
        sse.append(float(dist[np.arange(M), assign].sum()))
        counts = np.bincount(assign, minlength=K)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            centroids[empty] = x[rng.choice(M, size=empty.size, replace=False)]
    dist = _sq_dist64(x, centroids)
    sse.append(float(dist.min(axis=1).sum()))
    return (centroids, sse) if return_sse else centroids


def _sq_dist64(x, c):
    return np.maximum((x * x).sum(1)[:, None] - 2 * x @ c.T + (c * c).sum(1)[None, :], 0.0)


def _check_nq(nq, books):
    if not 1 <= nq <= books.stages:
        raise ConfigurationError(f"nq must be in [1, {books.stages}], got {nq}")


def rvq_encode(z, books, nq, return_residuals=False):
    """Quantize latent frames stage by stage.

    ``z`` is (B, D, F).  Returns ``(codes, zq)`` with codes (B, F, nq) int64
    and zq (B, D, F); with ``return_residuals`` also the list of per-stage
    residual inputs, each (B*F, D), and the final residual.
    """
    _check_nq(nq, books)
    z = np.asarray(z, DTYPE)
    if z.ndim != 3 or z.shape[1] != books.dim:
        raise ConfigurationError(f"latent must be (B, {books.dim}, F), got {z.shape}")
    B, D, F = z.shape
    frames = z.transpose(0, 2, 1).reshape(B * F, D)
    residual = frames.copy()
    codes = np.empty((B * F, nq), np.int64)
    residuals = []
    for s in range(nq):
        residuals.append(residual)
        idx = nearest(residual, books.vectors[s])
        codes[:, s] = idx
        residual = residual - books.vectors[s][idx]
    codes = codes.reshape(B, F, nq)
    zq = rvq_decode(codes, books)
    if return_residuals:
        return codes, zq, residuals, residual
    return codes, zq


def rvq_decode(codes, books):
    """Sum of the selected entries, accumulated from zero in stage order."""
    codes = np.asarray(codes)
    if codes.ndim == 2:
        codes = codes[None]
    B, F, nq = codes.shape
    _check_nq(nq, books)
    if codes.size and (codes.min() < 0 or codes.max() >= books.entries):
        raise CorruptStreamError(f"code index outside [0, {books.entries})")
    zq = np.zeros((B, F, books.dim), DTYPE)
    for s in range(nq):
        zq = zq + books.vectors[s][codes[:, :, s]]
    return zq.transpose(0, 2, 1)


def ema_update(books, residuals, codes):
    """One EMA step from per-stage residual inputs and their assignments.

    ``residuals`` is a list (one per used stage) of (M, D) arrays and
    ``codes`` is (M, nq) or (B, F, nq).  Stages beyond ``nq`` are untouched.
    """
    codes = np.asarray(codes).reshape(-1, len(residuals))
    d = books.decay
    for s, r in enumerate(residuals):
        r = np.asarray(r, np.float64)
        counts = np.bincount(codes[:, s], minlength=books.entries).astype(np.float64)
        sums = np.zeros((books.entries, books.dim))
        np.add.at(sums, codes[:, s], r)
        books.usage_ema[s] = d * books.usage_ema[s] + (1 - d) * counts
        books.cluster_sum_ema[s] = d * books.cluster_sum_ema[s] + (1 - d) * sums
        books.vectors[s] = (
            books.cluster_sum_ema[s] / np.maximum(books.usage_ema[s], EMA_EPS)[:, None]
        ).astype(DTYPE)
    return books


def reinit_dead_codes(books, pools, rng, threshold=DEAD_THRESHOLD):
    """Replace entries whose usage EMA is below ``threshold``.

    ``pools`` is one array of candidate frames (M, D) per stage (or a single
    array shared by all stages).  Replaced entries get usage 1.  Returns the
    number of replaced entries.
    """
    if not isinstance(pools, (list, tuple)):
        pools = [pools] * books.stages
    replaced = 0
    for s in range(books.stages):
        dead = np.flatnonzero(books.usage_ema[s] < threshold)
        if dead.size == 0:
            continue
        pool = np.asarray(pools[s] if s < len(pools) else [], np.float64)
        if pool.size == 0:
            log.warning("stage %d: %d dead entries but the replacement pool is empty", s, dead.size)
            continue
        pool = pool.reshape(-1, books.dim)
        pick = pool[rng.integers(pool.shape[0], size=dead.size)]
        books.vectors[s, dead] = pick.astype(DTYPE)
        books.usage_ema[s, dead] = 1.0
        books.cluster_sum_ema[s, dead] = pick
        replaced += dead.size
    return replaced


def commitment_loss(z, zq):
    z = np.asarray(z, np.float64)
    zq = np.asarray(zq, np.float64)
    if z.shape != zq.shape:
        raise ConfigurationError(f"shape mismatch {z.shape} vs {zq.shape}")
    return float(np.mean((z - zq) ** 2)) if z.size else 0.0


def train_rvq(books, latents, steps, rng, batch_frames=4096, kmeans_iters=10, nq=None, log_every=None):
    """k-means initialise every stage, then run EMA steps with dead-code reinit.

    ``latents`` is (M, D).  Returns the per-step quantization MSE list.
    """
    x = np.asarray(latents, DTYPE).reshape(-1, books.dim)
    nq = nq or books.stages
    residual = x
    for s in range(nq):
        centroids = kmeans_init(residual, books.entries, kmeans_iters, rng)
        books.vectors[s] = centroids.astype(DTYPE)
        books.usage_ema[s] = 1.0
        books.cluster_sum_ema[s] = centroids
        residual = residual - books.vectors[s][nearest(residual, books.vectors[s])]
    history = []
    for step in range(steps):
        batch = x[rng.integers(x.shape[0], size=min(batch_frames, x.shape[0]))]
        codes, zq, residuals, final = rvq_encode(batch.T[None], books, nq, return_residuals=True)
        history.append(float(np.mean(final.astype(np.float64) ** 2)))
        ema_update(books, residuals, codes)
        reinit_dead_codes(books, residuals, rng)
        if log_every and step % log_every == 0:
            log.info("rvq step %d mse %.6f", step, history[-1])
    return history

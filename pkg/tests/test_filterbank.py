import math

import numpy as np
import pytest

from hilcodec.errors import ConfigurationError
from hilcodec.filterbank import (
    alias_energy, avgpool_response, band_edges, design_pqmf, first_sidelobe_db, pqmf_analyze,
    pqmf_synthesize, reconstruction_snr, standard_sweep, transition_coverage,
)


@pytest.fixture(scope="module")
def bank4():
    return design_pqmf(4)


class TestDesign:
    def test_identity_bank(self, rng):
        bank = design_pqmf(1)
        x = rng.standard_normal(100).astype(np.float32)
        np.testing.assert_array_equal(pqmf_synthesize(pqmf_analyze(x, bank), bank)[0, 0], x)

    def test_default_taps(self, bank4):
        assert bank4.taps == 64
        assert bank4.analysis_filters.shape == (4, 64)

    def test_modulation_formula(self, bank4):
        p, N, L = bank4.prototype, 4, bank4.taps
        n = np.arange(L) - (L - 1) / 2
        for k in range(N):
            h = 2 * p * np.cos((2 * k + 1) * np.pi / (2 * N) * n + (-1) ** k * np.pi / 4)
            np.testing.assert_allclose(bank4.analysis_filters[k], h, atol=1e-15)

    def test_too_few_taps(self):
        with pytest.raises(ConfigurationError):
            design_pqmf(4, taps=7)

    @pytest.mark.parametrize("N", [2, 3, 4, 5, 7, 11])
    def test_reconstruction(self, N):
        x = np.random.default_rng(N).standard_normal(20000)
        assert reconstruction_snr(design_pqmf(N), x) >= 40

    def test_delay_is_peak(self, bank4):
        x = np.zeros(400)
        x[0] = 1
        y = pqmf_synthesize(pqmf_analyze(x, bank4), bank4)[0, 0]
        assert int(np.argmax(np.abs(y))) == bank4.delay == bank4.taps - 1


class TestAnalyze:
    def test_zero(self, bank4):
        assert np.all(pqmf_analyze(np.zeros(64), bank4) == 0)

    def test_shape(self, bank4):
        assert pqmf_analyze(np.zeros(65), bank4).shape == (1, 4, 17)

    def test_linearity(self, bank4, rng):
        a, b = rng.standard_normal(256), rng.standard_normal(256)
        np.testing.assert_allclose(pqmf_analyze(a + b, bank4),
                                   pqmf_analyze(a, bank4) + pqmf_analyze(b, bank4), atol=1e-6)

    @pytest.mark.parametrize("k", range(4))
    def test_tone_in_band(self, bank4, k):
        f = (2 * k + 1) / 16  # band centre
        x = np.cos(2 * np.pi * f * np.arange(8192))
        e = (pqmf_analyze(x, bank4)[0, :, 100:] ** 2).sum(axis=1)
        assert e[k] / e.sum() >= 0.9

    def test_synthesis_channel_mismatch(self, bank4):
        with pytest.raises(ConfigurationError):
            pqmf_synthesize(np.zeros((1, 3, 10)), bank4)

    def test_transition_coverage(self):
        rows = transition_coverage()
        assert len(rows) == sum(n - 1 for n in (1, 2, 3, 5, 7, 11))
        assert all(cover for _, _, cover in rows)
        np.testing.assert_allclose(band_edges(2), [0.25])


class TestAvgPool:
    def test_dc_and_null(self):
        db = avgpool_response(4, [0.0, 0.25])
        assert db[0] == 0.0
        assert db[1] <= -200

    def test_first_sidelobe(self):
        assert abs(first_sidelobe_db(4) - (-11.3)) <= 0.5

    def test_matches_fft(self):
        f = np.fft.rfftfreq(1024)
        ref = 20 * np.log10(np.maximum(np.abs(np.fft.rfft(np.ones(4) / 4, 1024)), 1e-15))
        got = avgpool_response(4, f)
        ok = ref > -100
        np.testing.assert_allclose(got[ok], ref[ok], atol=1e-6)


class TestAlias:
    def test_ordering(self):
        sweep = standard_sweep()
        plain, avg, pq = (alias_energy(sweep, 4, fe) for fe in ("plain", "avgpool", "pqmf"))
        assert plain > avg > pq
        assert plain > 0.3
        assert pq < 0.01

    @pytest.mark.parametrize("frontend", ["plain", "avgpool", "pqmf"])
    def test_band_limited(self, frontend):
        x = standard_sweep(2**15, 0.0, 0.1)
        assert alias_energy(x, 4, frontend) < 1e-3

    def test_factor_one(self):
        assert alias_energy(np.ones(10), 1, "plain") == 0.0

    def test_unknown_frontend(self):
        with pytest.raises(ConfigurationError):
            alias_energy(np.ones(10), 2, "median")

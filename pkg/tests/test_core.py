import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hilcodec import core
from hilcodec.core import LayerSpec, conv1d_forward, transposed_conv1d_forward
from hilcodec.errors import ConfigurationError, DegenerateWeightError


class TestConv1d:
    def test_identity_kernel(self, rng):
        """A K=1 unit kernel with zero bias passes the input through."""
        spec = LayerSpec("conv", 1, 1, 1)
        x = rng.standard_normal((2, 1, 50)).astype(np.float32)
        y = conv1d_forward(x, spec, np.ones((1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(y, x)

    def test_all_ones_causal(self):
        spec = LayerSpec("conv", 1, 1, 3)
        y = conv1d_forward(np.ones(8), spec, np.ones((1, 1, 3)), np.zeros(1))
        np.testing.assert_array_equal(y[0, 0], [1, 2, 3, 3, 3, 3, 3, 3])

    def test_mac_count(self):
        assert LayerSpec("conv", 1, 64, 7).macs(24000) == 10_752_000
        assert LayerSpec("pointwise-conv", 64, 64).macs(75) == 307_200

    def test_strided_output_length(self, rng):
        spec = LayerSpec("depthwise-conv", 4, 4, 8, 4)
        y = conv1d_forward(rng.standard_normal((1, 4, 40)), spec, rng.standard_normal((4, 1, 8)))
        assert y.shape == (1, 4, 10)

    def test_matches_direct_sum(self, rng):
        """Dense dilated strided conv against a plain loop."""
        spec = LayerSpec("conv", 3, 5, 3, 2, 2)
        x = rng.standard_normal((2, 3, 21)).astype(np.float32)
        w = rng.standard_normal(spec.weight_shape).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        y = conv1d_forward(x, spec, w, b)
        pad = np.concatenate([np.zeros((2, 3, 4)), x], axis=2)
        ref = np.zeros(y.shape)
        for t in range(y.shape[2]):
            for k in range(3):
                ref[:, :, t] += np.einsum("oc,bc->bo", w[:, :, k], pad[:, :, t * 2 + k * 2])
        ref += b[None, :, None]
        np.testing.assert_allclose(y, ref, rtol=1e-5, atol=1e-5)

    def test_history_equals_longer_signal(self, rng):
        """Feeding a history gives bitwise the tail of the full computation."""
        spec = LayerSpec("conv", 2, 3, 5, dilation=2)
        w = rng.standard_normal(spec.weight_shape).astype(np.float32)
        x = rng.standard_normal((1, 2, 64)).astype(np.float32)
        full = conv1d_forward(x, spec, w, tile=8)
        part = conv1d_forward(x[:, :, 32:], spec, w, history=x[:, :, 32 - spec.history : 32], tile=8)
        np.testing.assert_array_equal(part, full[:, :, 32:])

    def test_channel_mismatch_raises(self):
        with pytest.raises(ConfigurationError):
            conv1d_forward(np.zeros((1, 2, 4)), LayerSpec("conv", 3, 1, 1), np.zeros((1, 3, 1)))

    def test_bad_specs_raise(self):
        with pytest.raises(ConfigurationError):
            LayerSpec("conv", 1, 1, 0)
        with pytest.raises(ConfigurationError):
            LayerSpec("pointwise-conv", 1, 1, 3)
        with pytest.raises(ConfigurationError):
            LayerSpec("depthwise-conv", 2, 3, 3)
        with pytest.raises(ConfigurationError):
            LayerSpec("bogus", 1, 1)

    def test_cache_length(self):
        assert LayerSpec("conv", 1, 1, 7, dilation=3).history == 18

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 39), st.integers(1, 5), st.integers(1, 3), st.booleans())
    def test_causality(self, T, t, K, d, depthwise):
        """Changing samples after t never changes outputs at or before t."""
        t = t % T
        r = np.random.default_rng(T * 100 + t)
        spec = LayerSpec("depthwise-conv" if depthwise else "conv", 2, 2, K, dilation=d)
        w = r.standard_normal(spec.weight_shape).astype(np.float32)
        x = r.standard_normal((1, 2, T)).astype(np.float32)
        x2 = x.copy()
        x2[:, :, t + 1 :] += 1.0
        np.testing.assert_array_equal(conv1d_forward(x, spec, w)[:, :, : t + 1],
                                      conv1d_forward(x2, spec, w)[:, :, : t + 1])


class TestTransposedConv:
    def test_identity(self, rng):
        spec = LayerSpec("transposed-conv", 1, 1, 1, 1)
        x = rng.standard_normal((1, 1, 10)).astype(np.float32)
        np.testing.assert_array_equal(transposed_conv1d_forward(x, spec, np.ones((1, 1, 1))), x)

    def test_single_frame(self):
        spec = LayerSpec("transposed-conv", 1, 1, 2, 2)
        y = transposed_conv1d_forward(np.ones((1, 1, 1)), spec, np.ones((1, 1, 2)))
        np.testing.assert_array_equal(y[0, 0], [1, 1])

    def test_shape_rule(self, rng):
        spec = LayerSpec("transposed-conv", 3, 3, 16, 8, groups=3)
        y = transposed_conv1d_forward(rng.standard_normal((1, 3, 75)), spec, rng.standard_normal((3, 1, 16)))
        assert y.shape == (1, 3, 600)

    @pytest.mark.parametrize("K,s,groups", [(4, 2, 1), (16, 8, 3), (5, 2, 3), (3, 3, 1)])
    def test_matches_scatter_reference(self, rng, K, s, groups):
        """Polyphase result equals scatter-add upsampling with the tail trimmed."""
        C = 3
        spec = LayerSpec("transposed-conv", C, C, K, s, groups=groups)
        w = rng.standard_normal(spec.weight_shape).astype(np.float32)
        x = rng.standard_normal((2, C, 9)).astype(np.float32)
        y = transposed_conv1d_forward(x, spec, w)
        T = x.shape[2]
        ref = np.zeros((2, C, T * s + K))
        for t in range(T):
            for k in range(K):
                if groups == 1:
                    ref[:, :, t * s + k] += np.einsum("bi,io->bo", x[:, :, t], w[:, :, k])
                else:
                    ref[:, :, t * s + k] += x[:, :, t] * w[:, 0, k]
        np.testing.assert_allclose(y, ref[:, :, : T * s], rtol=1e-5, atol=1e-5)

    def test_history_equals_longer_signal(self, rng):
        spec = LayerSpec("transposed-conv", 2, 2, 10, 4, groups=2)
        w = rng.standard_normal(spec.weight_shape).astype(np.float32)
        x = rng.standard_normal((1, 2, 12)).astype(np.float32)
        full = transposed_conv1d_forward(x, spec, w, tile=4)
        h = spec.history
        part = transposed_conv1d_forward(x[:, :, 6:], spec, w, history=x[:, :, 6 - h : 6], tile=4)
        np.testing.assert_array_equal(part, full[:, :, 24:])


class TestActivations:
    def test_elu_values(self):
        np.testing.assert_allclose(core.elu([0.0, 1.0, -1.0]), [0.0, 1.0, math.exp(-1) - 1], rtol=1e-6)
        assert core.elu([-1.0])[0] == pytest.approx(-0.63212, abs=1e-5)

    def test_tanh_clip(self):
        y = core.tanh_clip([0.0, 0.5, 50.0, -50.0])
        assert y[0] == 0.0
        assert y[1] == pytest.approx(0.46212, abs=1e-5)
        assert y[2] < 1.0 and y[3] > -1.0


class TestWeightNorm:
    def test_unit_direction(self):
        np.testing.assert_allclose(core.fold_weight_norm([[0.6, 0.8]], [1.0]), [[0.6, 0.8]], rtol=1e-6)

    def test_direction_scale_invariance(self, rng):
        v = rng.standard_normal((4, 3, 5))
        g = rng.uniform(0.5, 2, 4)
        np.testing.assert_array_equal(core.fold_weight_norm(v, g), core.fold_weight_norm(10 * v, g))

    def test_three_four_five(self):
        np.testing.assert_allclose(core.fold_weight_norm([[3.0, 4.0]], [5.0]), [[3.0, 4.0]], rtol=1e-6)

    def test_zero_slice_raises(self):
        with pytest.raises(DegenerateWeightError):
            core.fold_weight_norm(np.zeros((2, 3)), [1.0, 1.0])

    def test_forward_equivalence(self, rng):
        """Running with folded weights matches g * v / ||v|| applied by hand."""
        spec = LayerSpec("conv", 3, 4, 3)
        v = rng.standard_normal(spec.weight_shape)
        g = rng.uniform(0.5, 2, 4)
        manual = g[:, None, None] * v / np.linalg.norm(v.reshape(4, -1), axis=1)[:, None, None]
        x = rng.standard_normal((2, 3, 30)).astype(np.float32)
        a = conv1d_forward(x, spec, core.fold_weight_norm(v, g))
        b = conv1d_forward(x, spec, manual.astype(np.float32))
        assert np.max(np.abs(a - b)) < 1e-6


class TestInit:
    @pytest.mark.parametrize("act,lo,hi", [(False, 0.008, 0.012), (True, 0.016, 0.024)])
    def test_variance(self, act, lo, hi):
        spec = LayerSpec("conv", 100, 1000, 1)
        w, b = core.init_layer(spec, act, np.random.default_rng(0))
        assert w.size == 10**5
        assert lo <= w.var() <= hi
        assert np.all(b == 0)


class TestStft:
    def test_zero_input(self):
        assert np.all(core.causal_stft(np.zeros(256), 64, 16) == 0)

    @pytest.mark.parametrize("F", [16, 64, 256])
    def test_impulse(self, F):
        """Frame 0 sees the impulse at its newest tap, weighted by the last window value."""
        x = np.zeros(4 * F)
        x[0] = 1.0
        S = core.causal_stft(x, F, F // 4)
        np.testing.assert_allclose(np.abs(S[0, :, 0]), core.hann(F)[-1], rtol=1e-5)

    def test_matches_rfft(self, rng):
        x = rng.standard_normal(512).astype(np.float32)
        F, hop = 64, 16
        S = core.causal_stft(x, F, hop)
        pad = np.concatenate([np.zeros(F - 1), x])
        t = 10
        ref = np.fft.rfft(pad[t * hop : t * hop + F] * core.hann(F))
        np.testing.assert_allclose(S[0, :, t], ref, rtol=1e-4, atol=1e-4)

    def test_causality(self, rng):
        x = rng.standard_normal(400)
        hop, t = 8, 20
        x2 = x.copy()
        x2[t * hop + 1] += 5.0
        a, b = core.causal_stft(x, 64, hop), core.causal_stft(x2, 64, hop)
        np.testing.assert_array_equal(a[:, :, : t + 1], b[:, :, : t + 1])

    def test_hop_zero_raises(self):
        with pytest.raises(ConfigurationError):
            core.causal_stft(np.zeros(64), 64, 0)


class TestMel:
    @pytest.mark.parametrize("F,n", [(32, 6), (64, 12), (128, 23), (256, 45), (512, 88), (1024, 128)])
    def test_rows_nonzero(self, F, n):
        fb = core.mel_filterbank(F, n, 24000)
        assert fb.shape == (n, F // 2 + 1)
        assert np.all(fb.max(axis=1) > 0)
        assert np.all(fb.sum(axis=0) >= 0)

    def test_empty_row_raises(self):
        with pytest.raises(ConfigurationError):
            core.mel_filterbank(32, 40, 24000)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hilcodec.analysis import (
    VarianceReport, average_channel_variance, count_complexity, layer_macs,
    signal_propagation, sweep_growth_factor, two_f_model_score,
)
from hilcodec.core import LayerSpec
from hilcodec.errors import ConfigurationError
from hilcodec.generator import GeneratorConfig

CFG = GeneratorConfig()


@pytest.fixture(scope="module")
def vcd_forced():
    return signal_propagation(seed=0, mode="vcd", gain_override=True)


@pytest.fixture(scope="module")
def vcd_zero():
    return signal_propagation(seed=0, mode="vcd", gain_override=False)


class TestAverageChannelVariance:
    def test_constant(self):
        assert average_channel_variance(np.full((2, 3, 10), 4.0)) == 0.0

    def test_standard_normal(self, rng):
        assert average_channel_variance(rng.standard_normal((4, 1, 2**14))) == pytest.approx(1.0, abs=0.05)

    def test_constructed(self, rng):
        x = rng.standard_normal((2, 2, 5000))
        x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
        x[:, 1] *= math.sqrt(3)
        assert average_channel_variance(x) == pytest.approx(2.0, rel=1e-5)

    def test_degenerate(self):
        with pytest.raises(ConfigurationError):
            average_channel_variance(np.zeros((1, 3, 1)))


class TestVarianceReport:
    def test_dynamic_range(self):
        r = VarianceReport("vcd", False, [("a", 2.0), ("b", 0.5)])
        assert r.dynamic_range() == 4.0
        r.taps.append(("c", 0.0))
        assert r.dynamic_range() == math.inf

    def test_csv(self):
        csv = VarianceReport("vcd", True, [("In", 1.0)]).to_csv()
        assert csv.splitlines() == ["# mode=vcd gain_override=1", "tap,variance", "In,1"]

    def test_tap_order(self, vcd_forced):
        names = [n for n, _ in vcd_forced.taps]
        assert names[0] == "In" and names[-1] == "Out" and "Q" in names
        assert names.index("enc.block3.down") < names.index("Q") < names.index("dec.block0.up")
        assert all(v >= 0 for _, v in vcd_forced.taps)


class TestSignalPropagation:
    def test_zero_init_flat(self, vcd_zero):
        """True zero-init: every residual tap equals the tap before it."""
        t = vcd_zero.as_dict()
        for i in range(4):
            p = f"enc.block{i}"
            before = "enc.conv0" if i == 0 else f"enc.block{i - 1}.down"
            assert t[p + ".spec"] == t[before]
            assert t[p + ".res1"] == t[p + ".spec"] == t[p + ".res2"]
        for j in range(4):
            p = f"dec.block{j}"
            assert t[p + ".res0"] == t[p + ".up"] == t[p + ".res2"]

    def test_deterministic(self, vcd_zero):
        again = signal_propagation(seed=0, mode="vcd", gain_override=False)
        assert again.taps == vcd_zero.taps

    def test_monotone_within_blocks(self, vcd_forced):
        t = vcd_forced.as_dict()
        for i in range(4):
            seq = [t[f"enc.block{i}.{n}"] for n in ("spec", "res1", "res2")]
            assert seq == sorted(seq)
        for j in range(4):
            seq = [t[f"dec.block{j}.{n}"] for n in ("up", "res0", "res1", "res2")]
            assert seq == sorted(seq)

    def test_block_ratios(self, vcd_forced):
        for name, r in vcd_forced.block_ratios(CFG).items():
            assert 1.5 <= r <= 2.5, name
        assert vcd_forced.dynamic_range() < 10

    def test_downsample_divisor(self, vcd_forced):
        t = vcd_forced.as_dict()
        for i in range(4):
            assert t[f"enc.block{i}.down_in"] == pytest.approx(t[f"enc.block{i}.res2"] / 2, rel=1e-3)
        assert t["enc.block0.down_in"] == pytest.approx(1.0, rel=0.3)

    @pytest.mark.xfail(strict=True, reason="skeleton convolutions shrink the variance entering later "
                                           "blocks to about 0.5, so their downsample input sits near 0.6")
    def test_downsample_input_unit_variance_all_blocks(self, vcd_forced):
        t = vcd_forced.as_dict()
        for i in range(1, 4):
            assert t[f"enc.block{i}.down_in"] == pytest.approx(1.0, rel=0.3)

    def test_bad_mode(self):
        with pytest.raises(ConfigurationError):
            signal_propagation(mode="other")


class TestSweepGrowth:
    def test_geometric(self):
        rows = [(d, 3.0 * 2.0**d) for d in range(1, 6)]
        assert sweep_growth_factor(rows) == pytest.approx(2.0)

    def test_skips_infinite(self):
        rows = [(1, 2.0), (2, 4.0), (3, math.inf)]
        assert sweep_growth_factor(rows) == pytest.approx(2.0)

    def test_needs_two(self):
        with pytest.raises(ConfigurationError):
            sweep_growth_factor([(1, 2.0), (2, math.inf)])


class TestComplexity:
    def test_hand_layers(self):
        assert LayerSpec("pointwise-conv", 64, 64).macs(75) == 307_200
        assert LayerSpec("depthwise-conv", 128, 128, 4, 2).macs(100) == 128 * 4 * 100
        assert LayerSpec("transposed-conv", 96, 96, 16, 8, groups=96).macs(600) == 96 * 16 * 75
        assert LayerSpec("conv", 3, 5, 7).n_params() == 5 * 3 * 7 + 5 + 5

    def test_additive(self):
        rep = count_complexity()
        rows = layer_macs(CFG)
        assert rep.mac_encoder == sum(m for _, _, role, m in rows if role == "encoder")
        assert rep.mac_decoder == sum(m for _, _, role, m in rows if role == "decoder")
        assert rep.mac_encode == rep.mac_encoder + rep.mac_quantizer
        assert rep.params == rep.params_generator + rep.params_codebooks

    def test_default_ranges(self):
        rep = count_complexity()
        assert 8_000_000 <= rep.params <= 12_000_000
        assert rep.mac_decode > rep.mac_encode
        assert rep.params_codebooks == 12 * 1024 * 128

    def test_csv(self):
        csv = count_complexity().to_csv().splitlines()
        assert csv[0] == "metric,value" and csv[1].startswith("params,")


class TestTwoF:
    def test_examples(self):
        assert two_f_model_score(0, 0) == 100.0
        raw = 56.1345 / (1 + 0.8628**2) + 86.3515
        assert raw == pytest.approx(118.53, abs=0.01)
        assert two_f_model_score(0, 4) == pytest.approx(9.95, abs=0.01)
        assert two_f_model_score(-100, 0) == pytest.approx(97.97, abs=0.01)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1e4, 1e4), st.floats(-1e3, 1e3), st.floats(0, 10))
    def test_range_and_monotone(self, amd, adb, step):
        a, b = two_f_model_score(amd, adb), two_f_model_score(amd, adb + step)
        assert 0 <= a <= 100 and 0 <= b <= 100
        assert b <= a

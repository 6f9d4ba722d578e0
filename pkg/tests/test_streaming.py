import copy

import numpy as np
import pytest

from hilcodec.errors import CorruptStreamError
from hilcodec.generator import layer_plan
from hilcodec.streaming import (
    StreamDecoder, StreamEncoder, SyntheticClock, bench_codec, bench_rtf, random_chunking,
    stream_decode, stream_encode, synthetic_rtf,
)

NQ = 4


@pytest.fixture(scope="module")
def signal():
    return (0.3 * np.random.default_rng(9).standard_normal(24000)).astype(np.float32)


@pytest.fixture(scope="module")
def offline(small_codec, signal):
    codes, _ = small_codec.encode(signal[None, None], NQ)
    return codes[0], small_codec.decode(codes)[0, 0]


class TestEncoder:
    def test_hop_chunks(self, small_codec, signal, offline):
        np.testing.assert_array_equal(stream_encode(small_codec, signal, [320] * 75, NQ), offline[0])

    def test_mixed_chunks(self, small_codec, signal, offline):
        np.testing.assert_array_equal(stream_encode(small_codec, signal, [640] * 37 + [320], NQ), offline[0])

    def test_ragged_chunks(self, small_codec, signal, offline, rng):
        sizes = random_chunking(signal.size, rng, 999)
        np.testing.assert_array_equal(stream_encode(small_codec, signal, sizes, NQ), offline[0])

    def test_zero_chunk_on_fresh_state(self, small_codec):
        enc = StreamEncoder(small_codec, NQ)
        ref, _ = small_codec.encode(np.zeros((1, 1, 640), np.float32), NQ)
        np.testing.assert_array_equal(enc.push(np.zeros(640)), ref[0])

    def test_buffering_and_finalize(self, small_codec):
        enc = StreamEncoder(small_codec, NQ)
        assert enc.push(np.zeros(200)).shape == (0, NQ)
        assert enc.push(np.zeros(200)).shape == (1, NQ)
        assert enc.finalize() == 80
        assert enc.state.frames_done == 1

    def test_cache_lengths(self, small_codec, signal):
        enc = StreamEncoder(small_codec, NQ)
        enc.push(signal[:3200])
        dec = StreamDecoder(small_codec)
        dec.push(np.zeros((3, NQ), int))
        caches = {**enc.state.caches, **dec.state.caches}
        for lp in layer_plan(small_codec.config):
            if lp.spec.history:
                assert caches[lp.name].shape[2] == lp.spec.history
            if lp.spec.kind != "transposed-conv":
                assert lp.spec.history == (lp.spec.kernel - 1) * lp.spec.dilation

    def test_reset(self, small_codec, signal):
        enc = StreamEncoder(small_codec, NQ)
        a = enc.push(signal[:1600])
        enc.reset()
        assert not enc.state.caches and enc.state.frames_done == 0
        np.testing.assert_array_equal(enc.push(signal[:1600]), a)


class TestDecoder:
    def test_frame_by_frame(self, small_codec, offline):
        codes, wave = offline
        y = stream_decode(small_codec, codes, [1] * len(codes))
        np.testing.assert_array_equal(y, wave)
        assert y.size == 24000
        assert np.all(np.abs(y) < 1)

    def test_reset_replay(self, small_codec, offline):
        dec = StreamDecoder(small_codec)
        a = dec.push(offline[0][:10])
        dec.reset()
        np.testing.assert_array_equal(dec.push(offline[0][:10]), a)

    def test_bad_index_leaves_state(self, small_codec, offline):
        dec = StreamDecoder(small_codec)
        dec.push(offline[0][:5])
        before = copy.deepcopy(dec.state.caches)
        bad = offline[0][5:8].copy()
        bad[1, 2] = small_codec.books.entries
        with pytest.raises(CorruptStreamError):
            dec.push(bad)
        assert before.keys() == dec.state.caches.keys()
        for k in before:
            np.testing.assert_array_equal(before[k], dec.state.caches[k])
        np.testing.assert_array_equal(dec.push(offline[0][5:]), offline[1][5 * 320 :])

    def test_finalize_empty(self, small_codec):
        assert StreamDecoder(small_codec).finalize().size == 0

    def test_interleaved_streams(self, small_codec, offline, signal):
        other = (0.2 * np.random.default_rng(1).standard_normal(24000)).astype(np.float32)
        other_codes, _ = small_codec.encode(other[None, None], NQ)
        e1, e2 = StreamEncoder(small_codec, NQ), StreamEncoder(small_codec, NQ)
        out1, out2 = [], []
        for pos in range(0, 24000, 4800):
            out1.append(e1.push(signal[pos : pos + 4800]))
            out2.append(e2.push(other[pos : pos + 4800]))
        np.testing.assert_array_equal(np.concatenate(out1), offline[0])
        np.testing.assert_array_equal(np.concatenate(out2), other_codes[0])


class TestChunking:
    def test_sums(self, rng):
        for total in (0, 1, 500, 24000):
            sizes = random_chunking(total, rng, 64)
            assert sum(sizes) == total and all(s >= 1 for s in sizes)


class TestRtf:
    def test_synthetic(self):
        rep = synthetic_rtf(1.0)
        assert rep.encode_rtf == pytest.approx(2.0, rel=0.05)
        assert rep.decode_rtf == pytest.approx(2.0, rel=0.05)
        assert rep.chunk == 320

    def test_duration_doubling(self):
        assert synthetic_rtf(2.0).encode_rtf == pytest.approx(synthetic_rtf(1.0).encode_rtf, rel=0.2)

    def test_counts_only_coding_time(self):
        clock = SyntheticClock()
        calls = []

        def enc(x):
            clock.sleep(0.001)
            calls.append(x.size)
            return x

        rep = bench_rtf(enc, lambda c: None, 10.0, 24000, 320, clock)
        assert sum(calls) == 240000
        assert rep.seconds == 10.0
        assert rep.encode_rtf == pytest.approx(10.0 / (0.001 * 750))

    def test_real_model(self, small_codec):
        rep = bench_codec(small_codec, 0.2)
        d = rep.as_dict()
        assert d["seconds"] == pytest.approx(0.2) and d["chunk"] == 320
        assert d["encode_rtf"] > 0 and d["decode_rtf"] > 0

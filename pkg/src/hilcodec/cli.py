"""Command-line interface.

Exit codes: 0 ok, 1 I/O, 2 format or sample-rate mismatch, 3 corrupt
stream, 64 usage.
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import analysis, bitstream, filterbank
from .errors import ConfigurationError, CorruptStreamError, FormatError
from .generator import GeneratorConfig, compute_norm_stats
from .io import load_codec, load_stats, read_wav, save_codec, save_stats, write_wav
from .model import Codec, QuantizerConfig
from .quantizer import train_rvq
from .streaming import bench_codec, synthetic_rtf

EXIT_OK, EXIT_IO, EXIT_FORMAT, EXIT_CORRUPT, EXIT_USAGE = 0, 1, 2, 3, 64

log = logging.getLogger("hilcodec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text, out=None):
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_init(args):
    config = GeneratorConfig(enc_channels=args.enc_channels, dec_channels=args.dec_channels)
    qconf = QuantizerConfig(stages=args.stages, entries=args.entries)
    stats = load_stats(args.stats) if args.stats else None
    codec = Codec.random(config, seed=args.seed, gain=args.gain, quant_config=qconf, stats=stats)
    save_codec(args.out, codec)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_encode(args):
    codec = load_codec(args.model)
    sr, x = read_wav(args.input)
    if sr != codec.config.sample_rate:
        print(f"sample rate {sr} Hz does not match the model's {codec.config.sample_rate} Hz "
              "(resampling is not supported)", file=sys.stderr)
        return EXIT_FORMAT
    t0 = time.perf_counter()
    codes, _ = codec.encode(x, args.nq)
    wall = time.perf_counter() - t0
    data = bitstream.pack(codes[0], sr, codec.config.hop, codec.books.codebook_bits)
    with open(args.output, "wb") as f:
        f.write(data)
    header = bitstream.read_header(data)
    print(f"frames={header.num_frames} nq={header.nq} bitrate={header.bitrate / 1000:g}kbps wall={wall:.3f}s")
    return EXIT_OK


def cmd_decode(args):
    codec = load_codec(args.model)
    with open(args.input, "rb") as f:
        data = f.read()
    header, codes = bitstream.unpack(data)
    if header.sample_rate != codec.config.sample_rate or header.hop != codec.config.hop:
        print("bitstream sample rate or hop does not match the model", file=sys.stderr)
        return EXIT_FORMAT
    if header.num_frames == 0:
        y = np.zeros(0, np.float32)
    else:
        y = codec.decode(codes[None])[0, 0]
    write_wav(args.output, header.sample_rate, y, pcm16=args.pcm16)
    print(f"samples={y.size}")
    return EXIT_OK


def cmd_analyze(args):
    what = args.what
    if what == "variance":
        rep = analysis.signal_propagation(seed=args.seed, mode=args.mode, gain_override=args.gain_override)
        _emit(rep.to_csv(), args.out)
    elif what == "depth-sweep":
        rows = analysis.depth_sweep(depths=range(1, args.max_depth + 1), mode=args.mode, seed=args.seed,
                                    gain_override=args.gain_override)
        _emit("depth,dynamic_range\n" + "".join(f"{d},{r:.9g}\n" for d, r in rows), args.out)
    elif what == "filters":
        if args.pqmf:
            bank = filterbank.design_pqmf(args.pqmf)
            f = np.linspace(0, 0.5, args.points)
            h = np.fft.rfft(bank.analysis_filters, n=2 * (args.points - 1), axis=1)
            db = 20 * np.log10(np.maximum(np.abs(h), 1e-15))
            lines = ["freq," + ",".join(f"band{k}_db" for k in range(bank.n_bands))]
            lines += [f"{fi:.6f}," + ",".join(f"{v:.4f}" for v in db[:, i]) for i, fi in enumerate(f)]
        else:
            f = np.linspace(0, 0.5, args.points)
            db = filterbank.avgpool_response(args.avgpool_taps, f)
            lines = [f"# first_sidelobe_db={filterbank.first_sidelobe_db(args.avgpool_taps):.4f}", "freq,db"]
            lines += [f"{a:.6f},{b:.4f}" for a, b in zip(f, db)]
        _emit("\n".join(lines) + "\n", args.out)
    elif what == "alias":
        sweep = filterbank.standard_sweep(args.length)
        lines = ["factor,frontend,alias_fraction"]
        for fe in ("plain", "avgpool", "pqmf"):
            lines.append(f"{args.factor},{fe},{filterbank.alias_energy(sweep, args.factor, fe):.9g}")
        _emit("\n".join(lines) + "\n", args.out)
    elif what == "complexity":
        _emit(analysis.count_complexity().to_csv(), args.out)
    elif what == "2f":
        _emit(f"{analysis.two_f_model_score(args.amd1, args.adb):.4f}\n", args.out)
    return EXIT_OK


def cmd_bench(args):
    if args.self_test:
        rep = synthetic_rtf(seconds=args.seconds, chunk=args.chunk)
    else:
        if not args.model:
            raise UsageError("bench needs a model path unless --self-test is given")
        codec = load_codec(args.model)
        rep = bench_codec(codec, args.seconds, nq=args.nq, chunk=args.chunk)
    print(json.dumps(rep.as_dict(), sort_keys=True))
    return EXIT_OK


def _wav_files(directory):
    if not os.path.isdir(directory):
        raise OSError(f"{directory}: not a directory")
    files = sorted(os.path.join(directory, f) for f in os.listdir(directory) if f.lower().endswith(".wav"))
    if not files:
        raise OSError(f"{directory}: no .wav files")
    return files


def _corpus(directory, sample_rate=None):
    out = []
    for path in _wav_files(directory):
        sr, x = read_wav(path)
        if sample_rate is not None and sr != sample_rate:
            raise FormatError(f"{path}: sample rate {sr} != {sample_rate}")
        out.append(x)
    return out


def cmd_stats(args):
    corpus = _corpus(args.corpus, args.sample_rate)
    stats = compute_norm_stats(corpus, n_chunks=args.n_chunks, seed=args.seed)
    save_stats(args.out, stats)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_rvq_train(args):
    codec = load_codec(args.model)
    corpus = _corpus(args.corpus, codec.config.sample_rate)
    latents = []
    for x in corpus:
        n = x.size - x.size % codec.config.hop
        if n:
            z = codec.generator.encode_latent(x[:n])
            latents.append(z[0].T)
    frames = np.concatenate(latents) if latents else np.zeros((0, codec.config.latent_dim))
    if frames.shape[0] < codec.books.entries:
        print(f"corpus gives {frames.shape[0]} frames, fewer than K={codec.books.entries}", file=sys.stderr)
        return EXIT_IO
    rng = np.random.default_rng(args.seed)
    history = train_rvq(codec.books, frames, args.steps, rng, batch_frames=args.batch)
    for i, mse in enumerate(history):
        print(f"step={i} mse={mse:.6g}")
    save_codec(args.out or args.model, codec)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="hilcodec", description="Streaming neural audio codec engine.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("init", help="write a freshly initialised model container")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stats")
    s.add_argument("--gain", type=float, default=None, help="residual gain (default 0)")
    s.add_argument("--enc-channels", type=int, default=64)
    s.add_argument("--dec-channels", type=int, default=96)
    s.add_argument("--stages", type=int, default=12)
    s.add_argument("--entries", type=int, default=1024)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("encode")
    s.add_argument("model")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--nq", type=int, default=4)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode")
    s.add_argument("model")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--pcm16", action="store_true")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("analyze")
    s.add_argument("what", choices=["variance", "depth-sweep", "filters", "alias", "complexity", "2f"])
    s.add_argument("--mode", choices=["vcd", "baseline"], default="vcd")
    s.add_argument("--gain-override", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-depth", type=int, default=8)
    s.add_argument("--avgpool-taps", type=int, default=4)
    s.add_argument("--pqmf", type=int, default=0, help="print a PQMF bank response instead")
    s.add_argument("--points", type=int, default=513)
    s.add_argument("--factor", type=int, default=4)
    s.add_argument("--length", type=int, default=2**15)
    s.add_argument("--amd1", type=float, default=0.0)
    s.add_argument("--adb", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("bench")
    s.add_argument("model", nargs="?")
    s.add_argument("--seconds", type=float, default=10.0)
    s.add_argument("--chunk", type=int, default=320)
    s.add_argument("--nq", type=int, default=4)
    s.add_argument("--self-test", action="store_true", help="time a synthetic workload on a controlled clock")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("stats")
    s.add_argument("corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n-chunks", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sample-rate", type=int, default=24000)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("rvq-train")
    s.add_argument("model")
    s.add_argument("corpus")
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch", type=int, default=4096)
    s.add_argument("--out")
    s.set_defaults(func=cmd_rvq_train)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"hilcodec: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CorruptStreamError as e:
        print(f"hilcodec: corrupt stream: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except (FormatError, ConfigurationError) as e:
        print(f"hilcodec: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"hilcodec: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

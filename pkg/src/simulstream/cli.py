"""Command-line entry point: run, bench, quantize, verify, inspect.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import model_io
from .audio import read_wav, write_wav
from .bench import DECODER_GRID, bench, format_table, parse_configs, write_report
from .config import ENC_FRAME_MS, ModelConfig, PipelineConfig, desk_config
from .errors import ConfigError, FormatError, InputError, SimulStreamError
from .pipeline import StreamingPipeline, run_offline
from .quantization import QuantizedTensor, quantize_weights, size_report
from .verify import FAULTS, run_checks

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
SEED_ENV = "SIMULSTREAM_SEED"

log = logging.getLogger("simulstream")


def default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from None


def _load_model(args, fallback: ModelConfig) -> model_io.ModelWeights:
    config = ModelConfig.load(args.config) if getattr(args, "config", None) else None
    if args.model:
        weights = model_io.load(args.model, config)
        model_io.check_weights(weights)
    else:
        seed = args.seed if args.seed is not None else default_seed()
        weights = model_io.init_random(config or fallback, seed)
    if getattr(args, "k", None) is not None:
        weights = weights.with_config(k=args.k)
    return weights


def cmd_run(args) -> int:
    weights = _load_model(args, ModelConfig())
    audio = read_wav(args.input)
    k = weights.config.k
    if audio.size * 1000 < k * ENC_FRAME_MS * 16000:
        log.warning("input shorter than wait-k delay (%.2f s < k=%d x %d ms); "
                    "output will be empty or flush-only", audio.size / 16000, k, ENC_FRAME_MS)
    if args.mode == "offline":
        result = run_offline(audio, weights)
    else:
        mode = "concurrent" if args.threads == 2 else "sequential"
        config = PipelineConfig(mode=mode, realtime_pacing=args.pace,
                                channel_capacity=max(256, k), model_path=args.model,
                                config_path=args.config)
        result = StreamingPipeline(weights, config).run(audio)
    write_wav(args.output, result.waveform, weights.config.out_rate)
    summary = result.summary("concurrent" if args.mode == "streaming" and args.threads == 2
                             else "sequential")
    if args.metrics:
        _write_metrics(Path(args.metrics), result, summary)
    print(f"wrote {result.waveform.size} samples ({result.steps} frames) to {args.output}")
    if summary["first_output_delay_ms"] is not None:
        print(f"first output at {summary['first_output_delay_ms']:.1f} ms, "
              f"mean RTF {summary['mean_rtf']:.2f}")
    return EXIT_OK


def _write_metrics(path: Path, result, summary: dict) -> None:
    rows = [m.to_dict() for m in result.metrics]
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["frame_index", "encoder_ms", "decoder_vocoder_ms",
                                                    "wall_emit_ms", "rtf"])
            writer.writeheader()
            writer.writerows(rows)
    else:
        with path.open("w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    summary_path = path.with_name(path.stem + ".summary.json")
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")


def cmd_bench(args) -> int:
    configs = parse_configs(args.configs) if args.configs else list(DECODER_GRID)
    seed = args.seed if args.seed is not None else default_seed()
    report = bench(configs, int8=args.int8, repeat=args.repeat, enc_layers=args.enc_layers,
                   k=args.k, seconds=args.seconds, seed=seed)
    print(format_table(report))
    if args.report:
        write_report(report, args.report)
    return EXIT_OK if report.rows else EXIT_VERIFY


def cmd_quantize(args) -> int:
    weights = model_io.load(args.input)
    quantized = quantize_weights(weights, args.policy)
    written = model_io.save(quantized, args.output)
    before = Path(args.input).stat().st_size
    print(f"wrote {args.output}: {written} bytes (float {before} bytes, ratio {before / written:.2f}x)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    weights = model_io.load(args.model)
    print(f"{'name':<36} {'dtype':<5} {'shape':<18} {'bytes':>10}")
    for name, t in weights.tensors.items():
        dtype = "i8" if isinstance(t, QuantizedTensor) else "f32"
        print(f"{name:<36} {dtype:<5} {str(tuple(t.shape)):<18} {t.nbytes:>10}")
    cfg = weights.config
    dtype, policy = "f32", "per-channel"
    quantized = [t for t in weights.tensors.values() if isinstance(t, QuantizedTensor)]
    if quantized:
        dtype = "i8"
        if any(t.scales.size == 1 and t.shape[-1] != 1 for t in quantized):
            policy = "per-tensor"
    sizes = size_report(weights)
    print(f"tensors: {len(weights)}  dtype: {dtype}")
    print(f"config: enc {cfg.enc_layers}x{cfg.enc_dim}, dec {cfg.dec_layers}x{cfg.dec_dim}, "
          f"mels {cfg.mel_bins}->{cfg.out_mels}")
    print(f"predicted file bytes: {model_io.predicted_file_size(cfg, dtype, policy)}")
    print(f"on-disk file bytes:   {Path(args.model).stat().st_size}")
    print(f"est. peak memory:     {sizes['est_peak_memory_bytes']} bytes")
    return EXIT_OK


def cmd_verify(args) -> int:
    weights = _load_model(args, desk_config())
    seed = args.seed if args.seed is not None else default_seed()
    results = run_checks(weights, seed=seed, tolerance=args.tolerance, fault=args.inject_fault)
    for r in results:
        print(r.line())
    failed = sorted({r.module for r in results if not r.passed})
    if failed:
        print(f"verification FAILED in: {', '.join(failed)}")
        return EXIT_VERIFY
    print(f"verification passed (tolerance {args.tolerance:g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulstream",
                                     description="Streaming simultaneous speech translation runtime")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="translate a 16 kHz WAV into a 24 kHz WAV")
    p.add_argument("--model", help="weight file (random weights from --seed if omitted)")
    p.add_argument("--config", help="ModelConfig JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--mode", choices=("streaming", "offline"), default="streaming")
    p.add_argument("--threads", type=int, choices=(1, 2), default=2)
    p.add_argument("--pace", action=argparse.BooleanOptionalAction, default=False,
                   help="feed packets at the 20 ms real-time cadence")
    p.add_argument("--metrics", help="per-frame metrics (.jsonl or .csv); a .summary.json is written alongside")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="latency / RTF / size table over decoder configs")
    p.add_argument("--configs", help="comma list like 768x6,256x4 (default: 256/512/768 x 4/6 layers)")
    p.add_argument("--int8", action="store_true", help="add int8-quantized rows")
    p.add_argument("--repeat", type=int, default=1, help="timing = median over N runs")
    p.add_argument("--report", help="write report (.json or .csv)")
    p.add_argument("--enc-layers", type=int, default=ModelConfig.enc_layers)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--seconds", type=float, default=2.0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("quantize", help="int8 dynamic-range quantization of a weight file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--policy", choices=("per-channel", "per-tensor"), default="per-channel")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("inspect", help="print tensors and predicted sizes")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("verify", help="streaming-equivalence and causality checks")
    p.add_argument("--model")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--inject-fault", choices=FAULTS, help="test hook: corrupt a cache mid-stream")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SimulStreamError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())

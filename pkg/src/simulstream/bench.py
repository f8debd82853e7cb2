"""Latency / RTF / size benchmark over decoder configurations."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import DEC_FRAME_MS, ModelConfig, PipelineConfig
from .errors import ConfigError
from .model_io import init_random
from .pipeline import StreamingPipeline, compute_rtf, feasibility_check
from .quantization import quantize_weights, size_report

log = logging.getLogger(__name__)

COLUMNS = ("decoder_dim", "layers", "latency_ms", "rtf", "size_mb", "memory_mb", "dtype")
DECODER_GRID = ((768, 6), (512, 6), (256, 6), (768, 4), (512, 4), (256, 4))


@dataclass
class BenchRow:
    decoder_dim: int
    layers: int
    latency_ms: float
    rtf: float
    size_mb: float
    memory_mb: float
    dtype: str


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"settings": self.settings, "rows": [asdict(r) for r in self.rows],
                "failures": self.failures}


def parse_configs(text: str) -> list[tuple[int, int]]:
    """Parse ``"768x6,256x4"`` into ``[(768, 6), (256, 4)]``."""
    out = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        dim, sep, layers = item.partition("x")
        if not sep or not dim.isdigit() or not layers.isdigit():
            raise ConfigError(f"bad config {item!r}; expected DIMxLAYERS like 768x6")
        out.append((int(dim), int(layers)))
    if not out:
        raise ConfigError("no configs given")
    return out


def bench_input(seconds: float, seed: int = 0) -> np.ndarray:
    """Fixed pseudo-speech input: noise bursts shaped by a slow envelope."""
    rng = np.random.default_rng(seed)
    n = int(seconds * 16000)
    t = np.arange(n) / 16000
    envelope = 0.5 + 0.5 * np.sin(2 * np.pi * 3.0 * t)
    return (rng.standard_normal(n) * envelope * 4000).clip(-32768, 32767).astype(np.int16)


def measure_latency(weights, audio: np.ndarray, repeat: int = 1) -> float:
    """Median over repeats of the mean per-frame bottleneck stage cost (ms)."""
    runs = []
    pipe = StreamingPipeline(weights, PipelineConfig(mode="sequential", channel_capacity=max(256, weights.config.k)))
    for _ in range(max(1, repeat)):
        result = pipe.run(audio)
        if not result.metrics:
            raise RuntimeError("benchmark input produced no output frames; lengthen it or lower k")
        runs.append(feasibility_check(result.metrics, "concurrent").mean_ms)
    return float(statistics.median(runs))


def bench(configs: Sequence[tuple[int, int]], *, int8: bool = False, repeat: int = 1,
          enc_layers: int = ModelConfig.enc_layers, k: int = 25, seconds: float = 2.0,
          seed: int = 0) -> BenchReport:
    audio = bench_input(seconds, seed)
    report = BenchReport(settings={"enc_layers": enc_layers, "k": k, "input_seconds": seconds,
                                   "repeat": repeat, "seed": seed, "frame_ms": DEC_FRAME_MS})
    for dim, layers in configs:
        try:
            config = ModelConfig(enc_layers=enc_layers, dec_dim=dim, dec_layers=layers, k=k)
            weights = init_random(config, seed)
            variants = [("float32", weights)]
            if int8:
                variants.append(("int8", quantize_weights(weights)))
            for dtype, w in variants:
                latency = measure_latency(w, audio, repeat)
                sizes = size_report(w)
                report.rows.append(BenchRow(dim, layers, latency, compute_rtf(DEC_FRAME_MS, latency),
                                            sizes["file_bytes"] / 1e6,
                                            sizes["est_peak_memory_bytes"] / 1e6, dtype))
        except Exception as exc:  # noqa: BLE001 - per-config failures are recorded
            log.warning("config %sx%s failed: %s", dim, layers, exc)
            report.failures.append({"decoder_dim": dim, "layers": layers, "error": str(exc)})
    return report


def write_report(report: BenchReport, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=COLUMNS)
            writer.writeheader()
            for row in report.rows:
                writer.writerow(asdict(row))
    else:
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def format_table(report: BenchReport) -> str:
    lines = ["dim/layers  dtype    latency_ms    rtf  size_mb  memory_mb"]
    for r in report.rows:
        lines.append(f"{r.decoder_dim:>4}/{r.layers:<6} {r.dtype:<8} {r.latency_ms:>10.2f} "
                     f"{r.rtf:>6.2f} {r.size_mb:>8.1f} {r.memory_mb:>10.1f}")
    for f in report.failures:
        lines.append(f"{f['decoder_dim']:>4}/{f['layers']:<6} FAILED: {f['error']}")
    return "\n".join(lines)

import json
import math

import numpy as np
import pytest

from simulstream import (PipelineConfig, StreamingPipeline, compute_rtf, desk_config,
                         feasibility_check, init_random, run_offline, run_streaming)
from simulstream.bench import COLUMNS, bench, parse_configs, write_report
from simulstream.errors import ConfigError, InputError
from simulstream.pipeline import FrameMetrics
from simulstream.quantization import quantize_weights
from tests.conftest import noise


def run(weights, audio, mode, **kw):
    return StreamingPipeline(weights, PipelineConfig(mode=mode, **kw)).run(audio)


@pytest.mark.parametrize("frame,proc,expected", [(25, 18, 25 / 18), (25, 8, 3.125), (25, 25, 1.0)])
def test_rtf_formula(frame, proc, expected):
    assert compute_rtf(frame, proc) == pytest.approx(expected)


def test_rtf_edge_cases():
    assert compute_rtf(25, 0) == math.inf
    with pytest.raises(ValueError):
        compute_rtf(25, -1)


def test_feasibility_modes():
    seq = feasibility_check([(8.0, 18.0)], "sequential")
    assert not seq.passed and seq.mean_ms == 26.0
    con = feasibility_check([(8.0, 18.0)], "concurrent")
    assert con.passed and con.margin_ms == 7.0
    assert feasibility_check([FrameMetrics(0, 8.0, 18.0, 0.0, 1.0)], "concurrent").mean_ms == 18.0
    with pytest.raises(ValueError):
        feasibility_check([], "parallel")


def test_modes_are_bit_identical(desk_weights, rng):
    audio = noise(rng, 320 * 40)
    seq = run(desk_weights, audio, "sequential")
    con = run(desk_weights, audio, "concurrent")
    assert seq.waveform.size > 0
    np.testing.assert_array_equal(seq.waveform, con.waveform)
    assert seq.waveform.size == 600 * seq.steps


def test_every_frame_is_consumed(desk_weights, rng):
    result = run(desk_weights, noise(rng, 320 * 40), "concurrent")
    assert result.frames_produced == result.frames_consumed == 39  # (12800 - 400) // 320
    assert len(result.metrics) == result.steps


def test_backpressure_bounds_queue(desk_weights, rng):
    k = desk_weights.config.k
    result = run(desk_weights, noise(rng, 320 * 60), "concurrent", channel_capacity=k)
    assert result.max_in_flight <= k
    assert result.frames_consumed == 59


def test_capacity_below_k_rejected(desk_weights):
    with pytest.raises(ConfigError):
        StreamingPipeline(desk_weights, PipelineConfig(channel_capacity=2))
    StreamingPipeline(desk_weights, PipelineConfig(mode="sequential", channel_capacity=2))


def test_empty_audio(desk_weights):
    for mode in ("sequential", "concurrent"):
        result = run(desk_weights, np.zeros(0, np.int16), mode)
        assert result.waveform.size == 0 and result.steps == 0


@pytest.mark.parametrize("audio", [np.zeros(640, np.float32), np.zeros((640, 2), np.int16)])
def test_malformed_audio_rejected(desk_weights, audio):
    with pytest.raises(InputError):
        run(desk_weights, audio, "sequential")


def test_realtime_pacing(desk_weights, rng):
    result = run(desk_weights, noise(rng, 320 * 15), "concurrent", realtime_pacing=True)
    for i, t in enumerate(result.ingest_ms):
        assert t >= i * 20 - 5
    assert result.first_output_ms >= desk_weights.config.k * 20 - 25


def test_offline_tracks_streaming(desk_weights, rng):
    audio = noise(rng, 320 * 40)
    streamed = run_streaming(PipelineConfig(mode="sequential"), audio, desk_weights)
    offline = run_offline(audio, desk_weights)
    assert streamed.steps == offline.steps
    assert np.max(np.abs(streamed.waveform - offline.waveform)) <= 1e-3


def test_summary_fields(desk_weights, rng):
    summary = run(desk_weights, noise(rng, 320 * 30), "sequential").summary()
    json.dumps(summary)
    assert summary["output_samples"] == 600 * summary["output_frames"]
    assert summary["first_output_delay_ms"] is not None
    assert summary["mean_rtf"] > 0


def test_int8_pipeline_runs(desk_weights, rng):
    audio = noise(rng, 320 * 30)
    ref = run(desk_weights, audio, "sequential").waveform
    q = run(quantize_weights(desk_weights), audio, "sequential").waveform
    assert q.shape == ref.shape and np.all(np.isfinite(q))


def test_parse_configs():
    assert parse_configs("768x6, 256x4") == [(768, 6), (256, 4)]
    for bad in ("", "768", "x6", "768x", "7a8x6"):
        with pytest.raises(ConfigError):
            parse_configs(bad)


def test_bench_single_config_and_report(tmp_path):
    report = bench([(256, 4)], enc_layers=2, k=5, seconds=0.6, int8=True)
    assert [r.dtype for r in report.rows] == ["float32", "int8"]
    assert report.rows[0].size_mb / report.rows[1].size_mb > 3.0
    write_report(report, tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header.split(",") == list(COLUMNS)
    write_report(report, tmp_path / "r.json")
    assert len(json.loads((tmp_path / "r.json").read_text())["rows"]) == 2


def test_bench_sizes_are_repeatable():
    a = bench([(256, 4)], enc_layers=2, k=5, seconds=0.6)
    b = bench([(256, 4)], enc_layers=2, k=5, seconds=0.6)
    assert (a.rows[0].size_mb, a.rows[0].memory_mb) == (b.rows[0].size_mb, b.rows[0].memory_mb)


def test_bench_records_failures():
    report = bench([(0, 4), (256, 4)], enc_layers=2, k=5, seconds=0.6)
    assert len(report.rows) == 1 and report.failures[0]["decoder_dim"] == 0

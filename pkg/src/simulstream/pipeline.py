"""Real-time orchestration of frontend, encoder, decoder and vocoder.

Concurrent mode runs two workers joined by a bounded, blocking FIFO: the
encoder worker turns packets into encoder frames, the decoder-vocoder worker
consumes them under the wait-k schedule. Sequential mode interleaves both
stages in one worker. The schedule depends only on counters, so both modes
produce identical samples; only timing differs.
"""

from __future__ import annotations

import logging
import math
import queue
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import frontend
from .config import DEC_FRAME_MS, ENC_FRAME_MS, PACKET_SAMPLES, DecoderConfig, PipelineConfig
from .decoder import Action, Decoder, DecoderFrame, decode, postnet_offline
from .encoder import Encoder, EncoderFrame, encode_offline_array
from .errors import InputError
from .vocoder import VocoderState, vocode_offline, vocode_step

log = logging.getLogger(__name__)

PACKET_MS = PACKET_SAMPLES * 1000 // 16000


@dataclass
class FrameMetrics:
    frame_index: int
    encoder_ms: float
    decoder_vocoder_ms: float
    wall_emit_ms: float
    rtf: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    waveform: np.ndarray
    metrics: list
    mode: str
    frames_produced: int = 0
    frames_consumed: int = 0
    max_in_flight: int = 0
    frontend_ms: float = 0.0
    encoder_ms: float = 0.0
    first_output_ms: Optional[float] = None
    ingest_ms: list = field(default_factory=list, repr=False)
    decoder_frames: list = field(default_factory=list, repr=False)

    @property
    def steps(self) -> int:
        return len(self.decoder_frames)

    def summary(self, mode_for_feasibility: Optional[str] = None) -> dict:
        mode = mode_for_feasibility or self.mode
        feas = feasibility_check(self.metrics, mode)
        enc = [m.encoder_ms for m in self.metrics]
        dv = [m.decoder_vocoder_ms for m in self.metrics]
        return {
            "mode": self.mode,
            "output_frames": len(self.metrics),
            "output_samples": int(self.waveform.size),
            "encoder_frames": self.frames_produced,
            "first_output_delay_ms": self.first_output_ms,
            # emit time minus the end time of the newest source audio attended
            "mean_frame_lag_ms": _mean([m.wall_emit_ms - (f.window[1] + 1) * ENC_FRAME_MS
                                        for m, f in zip(self.metrics, self.decoder_frames)]),
            "mean_encoder_ms": _mean(enc),
            "mean_decoder_vocoder_ms": _mean(dv),
            "frontend_ms_total": self.frontend_ms,
            "mean_rtf": compute_rtf(DEC_FRAME_MS, feas.mean_ms) if self.metrics else None,
            "feasible": feas.passed,
            "feasibility_margin_ms": feas.margin_ms,
        }


def _mean(values) -> Optional[float]:
    values = list(values)
    return float(np.mean(values)) if values else None


def compute_rtf(frame_duration_ms: float, processing_ms: float) -> float:
    """Output frame duration over the time taken to produce it (> 1 is real time).

    Zero processing time means the clock was too coarse to measure; ``inf`` is returned.
    """
    if processing_ms < 0 or frame_duration_ms < 0:
        raise ValueError("durations must be non-negative")
    if processing_ms == 0:
        log.warning("processing time measured as zero; reporting RTF as inf")
        return math.inf
    return frame_duration_ms / processing_ms


@dataclass(frozen=True)
class Feasibility:
    passed: bool
    mean_ms: float
    budget_ms: float
    mode: str

    @property
    def margin_ms(self) -> float:
        return self.budget_ms - self.mean_ms


def feasibility_check(metrics: Iterable, mode: str, budget_ms: float = DEC_FRAME_MS) -> Feasibility:
    """Real-time feasibility: per-frame stage cost must fit in one output frame.

    ``metrics`` holds FrameMetrics or ``(encoder_ms, decoder_vocoder_ms)`` pairs.
    Sequential mode pays for both stages; concurrent mode only for the slower one.
    """
    if mode not in ("sequential", "concurrent"):
        raise ValueError(f"unknown mode {mode!r}")
    combine = (lambda e, d: e + d) if mode == "sequential" else max
    costs = []
    for m in metrics:
        e, d = (m.encoder_ms, m.decoder_vocoder_ms) if isinstance(m, FrameMetrics) else m
        costs.append(combine(e, d))
    mean = float(np.mean(costs)) if costs else 0.0
    return Feasibility(mean <= budget_ms, mean, budget_ms, mode)


class _Channel:
    """Bounded blocking FIFO between the two workers, with abort support."""

    def __init__(self, capacity: int, abort: threading.Event):
        self.q = queue.Queue(maxsize=capacity)
        self.abort = abort
        self.produced = 0
        self.consumed = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    def put(self, item) -> bool:
        while not self.abort.is_set():
            try:
                self.q.put(item, timeout=0.05)
            except queue.Full:
                continue
            if item is not None:
                with self._lock:
                    self.produced += 1
                    self.max_in_flight = max(self.max_in_flight, self.produced - self.consumed)
            return True
        return False

    def get(self):
        while not self.abort.is_set():
            try:
                item = self.q.get(timeout=0.05)
            except queue.Empty:
                continue
            if item is not None:
                with self._lock:
                    self.consumed += 1
            return item
        raise _Aborted()


class _Aborted(Exception):
    pass


class StreamingPipeline:
    """Streaming runtime for one model; each ``run`` call processes one utterance."""

    def __init__(self, weights, config: Optional[PipelineConfig] = None,
                 decoder_config: Optional[DecoderConfig] = None):
        config = config or PipelineConfig()
        if config.k is not None and config.k != weights.config.k:
            weights = weights.with_config(k=config.k)
        self.weights = weights
        self.config = config
        self.decoder_config = decoder_config or DecoderConfig.from_model(weights.config)
        config.check_k(self.decoder_config.k)
        self.encoder = Encoder(weights)
        self.decoder = Decoder(weights, self.decoder_config)
        # Test hook: called with the encoder state after every encoder frame.
        self.encoder_hook: Optional[Callable] = None

    # -- stages -----------------------------------------------------------------

    def _write(self, dstate, vstate, clock, result: RunResult, out: list, mode: str) -> None:
        t0 = time.perf_counter()
        frame = self.decoder.step(dstate)
        refined = self.decoder.postnet(dstate, frame.mel)
        samples = vocode_step(vstate, refined, self.weights)
        dv_ms = (time.perf_counter() - t0) * 1e3
        out.append(samples)
        result.decoder_frames.append(frame)
        wall = clock.now_ms()
        if result.first_output_ms is None:
            result.first_output_ms = wall
        newest = self._newest_frame_ms(dstate)
        enc_ms = newest * DEC_FRAME_MS / ENC_FRAME_MS
        cost = enc_ms + dv_ms if mode == "sequential" else max(enc_ms, dv_ms)
        result.metrics.append(FrameMetrics(frame.step, enc_ms, dv_ms, wall,
                                           compute_rtf(DEC_FRAME_MS, cost)))

    def _newest_frame_ms(self, dstate) -> float:
        return self._compute_ms.get(dstate.window_span[1], 0.0)

    # -- modes ------------------------------------------------------------------

    def run(self, audio) -> RunResult:
        packets = frontend.packetize(_as_pcm(audio))
        self._compute_ms = {}
        if self.config.mode == "concurrent":
            return self._run_concurrent(packets)
        return self._run_sequential(packets)

    def _track(self, frame: EncoderFrame) -> None:
        self._compute_ms[frame.index] = frame.compute_ms

    def _run_sequential(self, packets) -> RunResult:
        result = RunResult(np.zeros(0, np.float32), [], "sequential")
        clock = _Clock()
        dstate, vstate = self.decoder.new_state(), VocoderState.create()
        pending: deque = deque()
        out: list = []
        finished = False

        def drain():
            while True:
                action = self.decoder.decision(dstate)
                if action is Action.READ:
                    if not pending:
                        return False
                    frame = pending.popleft()
                    if frame is None:
                        self.decoder.finish_source(dstate)
                    else:
                        result.frames_consumed += 1
                        self.decoder.receive(dstate, frame)
                elif action is Action.WRITE:
                    self._write(dstate, vstate, clock, result, out, "sequential")
                else:
                    return True

        stage = _EncoderStage(self, result, clock)
        for i, packet in enumerate(packets):
            for frame in stage.process(i, packet):
                self._track(frame)
                result.frames_produced += 1
                pending.append(frame)
            result.max_in_flight = max(result.max_in_flight, len(pending))
            finished = drain()
        if not finished:
            pending.append(None)
            drain()
        result.waveform = np.concatenate(out) if out else np.zeros(0, np.float32)
        return result

    def _run_concurrent(self, packets) -> RunResult:
        result = RunResult(np.zeros(0, np.float32), [], "concurrent")
        clock = _Clock()
        abort = threading.Event()
        channel = _Channel(self.config.channel_capacity, abort)
        errors: list = []
        out: list = []

        def encoder_worker():
            try:
                stage = _EncoderStage(self, result, clock)
                for i, packet in enumerate(packets):
                    if abort.is_set():
                        return
                    for frame in stage.process(i, packet):
                        self._track(frame)
                        if not channel.put(frame):
                            return
                channel.put(None)
            except BaseException as exc:  # noqa: BLE001 - re-raised in caller
                errors.append(exc)
                abort.set()

        def decoder_worker():
            dstate, vstate = self.decoder.new_state(), VocoderState.create()
            try:
                while True:
                    action = self.decoder.decision(dstate)
                    if action is Action.READ:
                        frame = channel.get()
                        if frame is None:
                            self.decoder.finish_source(dstate)
                        else:
                            self.decoder.receive(dstate, frame)
                    elif action is Action.WRITE:
                        self._write(dstate, vstate, clock, result, out, "concurrent")
                    else:
                        break
            except _Aborted:
                pass
            except BaseException as exc:  # noqa: BLE001
                errors.append(exc)
                abort.set()

        workers = [threading.Thread(target=encoder_worker, name="encoder", daemon=True),
                   threading.Thread(target=decoder_worker, name="decoder-vocoder", daemon=True)]
        for t in workers:
            t.start()
        for t in workers:
            t.join()
        if errors:
            raise errors[0]
        result.frames_produced = channel.produced
        result.frames_consumed = channel.consumed
        result.max_in_flight = channel.max_in_flight
        result.waveform = np.concatenate(out) if out else np.zeros(0, np.float32)
        return result


class _Clock:
    def __init__(self):
        self.start = time.monotonic()

    def now_ms(self) -> float:
        return (time.monotonic() - self.start) * 1e3

    def wait_until(self, ms: float) -> None:
        delay = ms / 1e3 - (time.monotonic() - self.start)
        if delay > 0:
            time.sleep(delay)


class _EncoderStage:
    """Frontend plus encoder, fed one packet at a time."""

    def __init__(self, pipeline: StreamingPipeline, result: RunResult, clock: _Clock):
        self.pipeline = pipeline
        self.result = result
        self.clock = clock
        self.fstate = frontend.FrontendState.create(pipeline.weights.config.mel_bins)
        self.estate = pipeline.encoder.new_state()

    def process(self, index: int, packet) -> list:
        p, result = self.pipeline, self.result
        if p.config.realtime_pacing:
            self.clock.wait_until(index * PACKET_MS)
        result.ingest_ms.append(self.clock.now_ms())
        t0 = time.perf_counter()
        mels = frontend.push_samples(self.fstate, packet)
        front_ms = (time.perf_counter() - t0) * 1e3
        result.frontend_ms += front_ms
        frames = []
        for mel in mels:
            t1 = time.perf_counter()
            frame = p.encoder.step(self.estate, mel)
            if p.encoder_hook is not None:
                p.encoder_hook(self.estate)
            if frame is None:
                continue
            elapsed = (time.perf_counter() - t1) * 1e3
            result.encoder_ms += elapsed
            frame.compute_ms = elapsed + front_ms / len(mels)
            frames.append(frame)
        return frames


def _as_pcm(audio) -> np.ndarray:
    audio = np.asarray(audio)
    if audio.ndim != 1:
        raise InputError(f"expected mono audio, got shape {audio.shape}")
    if audio.dtype != np.int16:
        raise InputError(f"expected int16 PCM, got {audio.dtype}")
    return audio


def run_streaming(config: PipelineConfig, audio, weights,
                  decoder_config: Optional[DecoderConfig] = None) -> RunResult:
    return StreamingPipeline(weights, config, decoder_config).run(audio)


def run_offline(audio, weights, decoder_config: Optional[DecoderConfig] = None,
                k: Optional[int] = None) -> RunResult:
    """Whole-utterance pass through the offline oracles (batch frontend, masked
    encoder, full-sequence PostNet and vocoder); the decoder schedule is shared."""
    if k is not None and k != weights.config.k:
        weights = weights.with_config(k=k)
    decoder_config = decoder_config or DecoderConfig.from_model(weights.config)
    packets = frontend.packetize(_as_pcm(audio))
    samples = np.concatenate(packets) if packets else np.zeros(0, np.int16)
    fb = frontend.build_mel_filterbank(n_mels=weights.config.mel_bins)
    mels = frontend.compute_batch(samples, fb)
    mels = mels[:mels.shape[0] - mels.shape[0] % 2]
    enc = encode_offline_array(mels, weights)
    frames = [EncoderFrame(row, i) for i, row in enumerate(enc)]
    dec_frames, _ = decode(frames, weights, decoder_config)
    raw = np.stack([f.mel for f in dec_frames]) if dec_frames else np.zeros((0, decoder_config.out_mels), np.float32)
    wave = vocode_offline(postnet_offline(raw, weights), weights)
    return RunResult(wave.astype(np.float32), [], "offline", frames_produced=len(frames),
                     frames_consumed=len(frames), decoder_frames=dec_frames)

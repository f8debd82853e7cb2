"""End-to-end streaming-equivalence and causality checks for a model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import frontend
from .config import PipelineConfig
from .decoder import new_postnet_cache, postnet_apply, postnet_offline
from .encoder import Encoder, encode_offline_array
from .frontend import MelFrame
from .pipeline import StreamingPipeline
from .vocoder import VocoderState, vocode_offline, vocode_step

FAULTS = ("conv-cache",)


@dataclass
class CheckResult:
    module: str
    check: str
    max_dev: float
    passed: bool
    exact: bool = False  # bit-exactness check, independent of the tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        bound = "== 0 (bit-exact)" if self.exact else "<= tol"
        return f"{status}  {self.module:<9} {self.check:<28} max|d|={self.max_dev:.3e}  {bound}"


def _max_dev(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        return float("inf")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def _stream_encoder(weights, mels: np.ndarray, fault: Optional[str] = None) -> np.ndarray:
    enc = Encoder(weights)
    state = enc.new_state()
    out = []
    for i, row in enumerate(mels):
        frame = enc.step(state, MelFrame(row, i))
        if fault == "conv-cache" and i == mels.shape[0] // 2 and state.caches:
            state.caches[0].conv = state.caches[0].conv + np.float32(1.0)
        if frame is not None:
            out.append(frame.features)
    return np.stack(out) if out else np.zeros((0, weights.config.enc_dim), np.float32)


def run_checks(weights, seed: int = 0, tolerance: float = 1e-4, fault: Optional[str] = None,
               frames: int = 40) -> list[CheckResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    rng = np.random.default_rng(seed)
    cfg = weights.config
    results = []

    # frontend: streaming vs one-pass, and causality
    audio = (rng.standard_normal(320 * 12) * 4000).astype(np.int16)
    st = frontend.FrontendState.create(cfg.mel_bins)
    streamed = [f.bins for p in frontend.packetize(audio) for f in frontend.push_samples(st, p)]
    batch = frontend.compute_batch(audio, st.filterbank)
    dev = _max_dev(np.stack(streamed), batch)
    results.append(CheckResult("frontend", "streaming == batch", dev, dev == 0.0, exact=True))
    cut = 2000
    other = audio.copy()
    other[cut:] = (rng.standard_normal(other.size - cut) * 4000).astype(np.int16)
    other_batch = frontend.compute_batch(other, st.filterbank)
    safe = frontend.frames_for_samples(cut)
    dev = _max_dev(batch[:safe], other_batch[:safe])
    results.append(CheckResult("frontend", "causality", dev, dev == 0.0, exact=True))

    # encoder: streaming vs band-masked offline, and causality
    mels = (rng.standard_normal((2 * frames, cfg.mel_bins)) * 3 - 6).astype(np.float32)
    streamed = _stream_encoder(weights, mels, fault)
    offline = encode_offline_array(mels, weights)
    dev = _max_dev(streamed, offline)
    results.append(CheckResult("encoder", "streaming == offline", dev, dev <= tolerance))
    perturbed = mels.copy()
    t = frames // 2
    perturbed[2 * t + 2:] += rng.standard_normal(perturbed[2 * t + 2:].shape).astype(np.float32)
    alt = _stream_encoder(weights, perturbed, fault)
    dev = _max_dev(streamed[:t + 1], alt[:t + 1])
    results.append(CheckResult("encoder", "causality", dev, dev == 0.0, exact=True))

    # postnet
    raw = rng.standard_normal((20, cfg.out_mels)).astype(np.float32)
    cache = new_postnet_cache(cfg.out_mels)
    streamed = np.stack([postnet_apply(cache, row, weights) for row in raw])
    dev = _max_dev(streamed, postnet_offline(raw, weights))
    results.append(CheckResult("postnet", "streaming == offline", dev, dev <= tolerance))

    # vocoder
    vs = VocoderState.create()
    streamed = np.concatenate([vocode_step(vs, row, weights) for row in raw[:10]])
    dev = _max_dev(streamed, vocode_offline(raw[:10], weights))
    results.append(CheckResult("vocoder", "streaming == offline", dev, dev <= tolerance))

    # pipeline: concurrent vs sequential
    k = min(cfg.k, 8)
    audio = (rng.standard_normal(320 * (2 * k + 12)) * 4000).astype(np.int16)
    outs = [StreamingPipeline(weights, PipelineConfig(mode=m, k=k, channel_capacity=max(256, k))).run(audio).waveform
            for m in ("sequential", "concurrent")]
    dev = _max_dev(*outs)
    results.append(CheckResult("pipeline", "concurrent == sequential", dev,
                               dev == 0.0 and outs[0].size > 0, exact=True))
    return results

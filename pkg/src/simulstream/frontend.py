"""Causal, incremental log-mel frontend (25 ms Hann window, 10 ms hop, 16 kHz)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import (FLOOR_EPSILON, FRONTEND_F_MAX, FRONTEND_F_MIN, HOP_SAMPLES, N_FFT,
                     PACKET_SAMPLES, WINDOW_SAMPLES)
from .errors import ConfigError, InputError

SAMPLE_RATE = 16000


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """``n_mels + 2`` frequencies (Hz) equally spaced on the mel scale.

    Filter ``m`` rises from edge ``m`` to its center ``m + 1`` and falls to ``m + 2``.
    """
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))


def build_mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = 80,
                         f_min: float = FRONTEND_F_MIN, f_max: float = FRONTEND_F_MAX) -> np.ndarray:
    """Triangular mel filters, shape ``(n_mels, n_fft // 2 + 1)``, peak value 1."""
    if n_mels < 1:
        raise ConfigError(f"n_mels must be >= 1, got {n_mels}")
    if n_fft < 2:
        raise ConfigError(f"n_fft must be >= 2, got {n_fft}")
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ConfigError(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got [{f_min}, {f_max}]")
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    edges = mel_band_edges(n_mels, f_min, f_max)
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (ctr - lo)
    falling = (hi - freqs) / (hi - ctr)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) == 0)
    if empty.size:
        raise ConfigError(
            f"mel filters {empty.tolist()} fall between FFT bins; use a larger n_fft or fewer mels")
    return fb


@dataclass
class MelFrame:
    bins: np.ndarray  # float32, (n_mels,)
    index: int

    @property
    def timestamp_ms(self) -> int:
        return self.index * HOP_SAMPLES * 1000 // SAMPLE_RATE


@dataclass
class FrontendState:
    filterbank: np.ndarray
    pending: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float64))
    frames_emitted: int = 0
    samples_seen: int = 0

    @classmethod
    def create(cls, n_mels: int = 80) -> "FrontendState":
        return cls(filterbank=build_mel_filterbank(n_mels=n_mels))


_WINDOW = np.hanning(WINDOW_SAMPLES + 1)[:-1]  # periodic Hann


def _log_mel(window: np.ndarray, filterbank: np.ndarray) -> np.ndarray:
    spectrum = np.fft.rfft(window * _WINDOW, n=N_FFT)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    energy = filterbank @ power
    return np.log(np.maximum(energy, FLOOR_EPSILON)).astype(np.float32)


def pcm_to_float(samples) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.dtype != np.int16:
        raise InputError(f"expected int16 PCM samples, got {samples.dtype}")
    return samples.astype(np.float64) / 32768.0


def push_samples(state: FrontendState, packet) -> list[MelFrame]:
    """Append one 320-sample packet and return every newly completed frame."""
    packet = np.asarray(packet)
    if packet.shape != (PACKET_SAMPLES,):
        raise InputError(f"packet must hold exactly {PACKET_SAMPLES} samples, got shape {packet.shape}")
    return _push(state, pcm_to_float(packet))


def _push(state: FrontendState, audio: np.ndarray) -> list[MelFrame]:
    buf = np.concatenate([state.pending, audio])
    state.samples_seen += audio.size
    frames = []
    start = 0
    while start + WINDOW_SAMPLES <= buf.size:
        bins = _log_mel(buf[start:start + WINDOW_SAMPLES], state.filterbank)
        frames.append(MelFrame(bins, state.frames_emitted))
        state.frames_emitted += 1
        start += HOP_SAMPLES
    state.pending = buf[start:].copy()
    return frames


def reset(state: FrontendState) -> None:
    state.pending = np.zeros(0, np.float64)
    state.frames_emitted = 0
    state.samples_seen = 0


def frames_for_samples(n_samples: int) -> int:
    if n_samples < WINDOW_SAMPLES:
        return 0
    return (n_samples - WINDOW_SAMPLES) // HOP_SAMPLES + 1


def compute_batch(samples, filterbank=None) -> np.ndarray:
    """Log-mel frames for a whole int16 signal in one pass, ``(frames, n_mels)``."""
    audio = pcm_to_float(samples)
    if filterbank is None:
        filterbank = build_mel_filterbank()
    n = frames_for_samples(audio.size)
    out = np.empty((n, filterbank.shape[0]), np.float32)
    for i in range(n):
        start = i * HOP_SAMPLES
        out[i] = _log_mel(audio[start:start + WINDOW_SAMPLES], filterbank)
    return out


def packetize(samples) -> list[np.ndarray]:
    """Split int16 audio into 320-sample packets, zero-padding the last one."""
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise InputError(f"expected mono audio, got shape {samples.shape}")
    if samples.dtype != np.int16:
        raise InputError(f"expected int16 PCM samples, got {samples.dtype}")
    n = -(-samples.size // PACKET_SAMPLES)
    padded = np.zeros(n * PACKET_SAMPLES, np.int16)
    padded[:samples.size] = samples
    return [padded[i * PACKET_SAMPLES:(i + 1) * PACKET_SAMPLES] for i in range(n)]

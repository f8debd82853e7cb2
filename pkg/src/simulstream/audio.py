"""RIFF/WAVE PCM16 mono input and output."""

from __future__ import annotations

import wave

import numpy as np

from .errors import InputError


def read_wav(path, expected_rate: int = 16000) -> np.ndarray:
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise InputError(f"{path}: not a valid WAV file ({exc})") from None
    if channels != 1:
        raise InputError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise InputError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != expected_rate:
        raise InputError(f"{path}: expected {expected_rate} Hz, got {rate} Hz (no resampling)")
    return np.frombuffer(raw, "<i2").astype(np.int16)


def float_to_pcm16(samples: np.ndarray) -> np.ndarray:
    clipped = np.clip(np.asarray(samples, np.float64), -1.0, 1.0)
    return np.round(clipped * 32767.0).astype(np.int16)


def write_wav(path, samples: np.ndarray, rate: int = 24000) -> None:
    """Write float samples in [-1, 1] (or int16) as PCM16 mono."""
    samples = np.asarray(samples)
    pcm = samples if samples.dtype == np.int16 else float_to_pcm16(samples)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.astype("<i2").tobytes())

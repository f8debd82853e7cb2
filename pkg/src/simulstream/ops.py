"""Numerical building blocks shared by the encoder, decoder and vocoder.

Every op works on 2-D ``(time, channels)`` float32 arrays, so the streaming
path (time = 1 or a short chunk) and the offline path (whole sequence) call
the same kernels.
"""

from __future__ import annotations

import numpy as np

from .config import LAYERNORM_EPS
from .quantization import QuantizedTensor, qmatmul


def dense(x: np.ndarray, w, b=None) -> np.ndarray:
    if isinstance(w, QuantizedTensor):
        y = qmatmul(x, w)
    else:
        y = x @ w
    if b is not None:
        y = y + b
    return y


def as_float(w) -> np.ndarray:
    return w.dequantize() if isinstance(w, QuantizedTensor) else w


def relu(x):
    return np.maximum(x, np.float32(0))


def leaky_relu(x, slope):
    return np.where(x >= 0, x, x * np.float32(slope))


def sigmoid(x):
    return np.float32(1) / (np.float32(1) + np.exp(-x))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm_core(x: np.ndarray, eps: float = LAYERNORM_EPS) -> np.ndarray:
    """Normalize each row to zero mean, unit variance (no scale/bias)."""
    x64 = np.asarray(x, dtype=np.float64)  # row statistics in float64 limit drift over deep stacks
    centered = x64 - x64.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return (centered / np.sqrt(var + eps)).astype(np.float32)


def layer_norm(x, scale, bias, eps: float = LAYERNORM_EPS):
    return layer_norm_core(x, eps) * scale + bias


def causal_conv(padded: np.ndarray, w, b=None, dilation: int = 1) -> np.ndarray:
    """Valid 1-D convolution over an already left-padded ``(T + (K-1)*d, Cin)`` input.

    ``w`` has shape ``(K, Cin, Cout)``; tap ``K-1`` multiplies the newest sample.
    """
    taps = w.shape[0]
    steps = padded.shape[0] - (taps - 1) * dilation
    out = None
    for j in range(taps):
        seg = padded[j * dilation:j * dilation + steps]
        term = dense(seg, w[j])
        out = term if out is None else out + term
    if b is not None:
        out = out + b
    return out


def depthwise_causal_conv(padded: np.ndarray, kernel: np.ndarray, b=None) -> np.ndarray:
    """Per-channel causal convolution; ``kernel`` is ``(K, C)``."""
    taps = kernel.shape[0]
    steps = padded.shape[0] - (taps - 1)
    out = padded[0:steps] * kernel[0]
    for j in range(1, taps):
        out = out + padded[j:j + steps] * kernel[j]
    if b is not None:
        out = out + b
    return out


def push_context(cache: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Prepend the cached left context to ``x``; return (padded, new cache).

    The cache keeps a fixed length equal to the receptive-field overhang.
    """
    padded = np.concatenate([cache, x], axis=0)
    keep = cache.shape[0]
    new_cache = padded[padded.shape[0] - keep:].copy() if keep else cache
    return padded, new_cache

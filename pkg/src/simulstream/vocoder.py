"""Streaming MelGAN-style generator: one 128-bin mel frame in, 600 samples at 24 kHz out.

Topology: 1x1 input conv, four upsampling stages (transposed conv with kernel
``2 * factor`` and stride ``factor``, factors 5, 5, 4, 6) each followed by two
dilated residual blocks, then a kernel-7 output conv and tanh. Every conv is
causal. A transposed-conv output sample at position ``t * factor + r`` only
depends on inputs ``t`` and ``t - 1``, so keeping the previous input frame is
enough to stream it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import (LEAKY_SLOPE, RES_DILATIONS, RES_KERNEL, UPSAMPLE_FACTORS,
                     VOCODER_OUT_KERNEL, vocoder_channels)
from .errors import NumericError
from .ops import causal_conv, dense, leaky_relu, push_context

HOP = math.prod(UPSAMPLE_FACTORS)


@dataclass
class VocoderState:
    prev_inputs: list  # per stage: (1, cin) previous transposed-conv input
    res_caches: list  # per stage: list of ((K-1)*d, c) per residual block
    out_cache: np.ndarray
    samples_emitted: int = 0

    @classmethod
    def create(cls) -> "VocoderState":
        chans = vocoder_channels()
        prev = [np.zeros((1, chans[i]), np.float32) for i in range(len(UPSAMPLE_FACTORS))]
        res = [[np.zeros(((RES_KERNEL - 1) * d, chans[i + 1]), np.float32) for d in RES_DILATIONS]
               for i in range(len(UPSAMPLE_FACTORS))]
        out = np.zeros((VOCODER_OUT_KERNEL - 1, chans[-1]), np.float32)
        return cls(prev, res, out)


def _interleave(parts: list) -> np.ndarray:
    # parts[r] is (T, C) for phase r -> (T * len(parts), C) in time order
    return np.stack(parts, axis=1).reshape(-1, parts[0].shape[1])


def transposed_conv_step(x: np.ndarray, prev: np.ndarray, w, b, factor: int):
    """Causal transposed conv on ``x`` (T, Cin) given the previous input row.

    Returns ``(T * factor, Cout)`` and the new previous row.
    """
    shifted = np.concatenate([prev, x[:-1]], axis=0)
    parts = [dense(x, w[r]) + dense(shifted, w[factor + r]) for r in range(factor)]
    return _interleave(parts) + b, x[-1:].copy()


def transposed_conv_offline(x: np.ndarray, w, b, factor: int) -> np.ndarray:
    """Scatter-add transposed conv over the whole sequence, truncated causally."""
    T = x.shape[0]
    cout = w.shape[-1]
    taps = w.shape[0]
    y = np.zeros((T * factor + taps, cout), np.float32)
    for j in range(taps):
        y[j:j + T * factor:factor] += dense(x, w[j])
    return y[:T * factor] + b


def _residual(h: np.ndarray, padded: np.ndarray, p: str, weights, dilation: int) -> np.ndarray:
    r = causal_conv(padded, weights[p + "w1"], weights[p + "b1"], dilation)
    r = dense(leaky_relu(r, LEAKY_SLOPE), weights[p + "w2"], weights[p + "b2"])
    return h + r


def _check(frame: np.ndarray) -> np.ndarray:
    x = np.asarray(frame, np.float32)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite mel input to vocoder")
    return x


def vocode_chunk(state: VocoderState, mels: np.ndarray, weights) -> np.ndarray:
    """Stream a ``(T, out_mels)`` chunk; returns ``T * 600`` samples."""
    x = _check(mels)
    h = dense(x, weights["voc/in/w"], weights["voc/in/b"])
    for i, factor in enumerate(UPSAMPLE_FACTORS):
        h, state.prev_inputs[i] = transposed_conv_step(
            leaky_relu(h, LEAKY_SLOPE), state.prev_inputs[i],
            weights[f"voc/up{i}/w"], weights[f"voc/up{i}/b"], factor)
        for j, d in enumerate(RES_DILATIONS):
            padded, state.res_caches[i][j] = push_context(state.res_caches[i][j],
                                                          leaky_relu(h, LEAKY_SLOPE))
            h = _residual(h, padded, f"voc/up{i}/res{j}/", weights, d)
    padded, state.out_cache = push_context(state.out_cache, leaky_relu(h, LEAKY_SLOPE))
    y = np.tanh(causal_conv(padded, weights["voc/out/w"], weights["voc/out/b"]))[:, 0]
    y = np.clip(y, -1.0, 1.0)
    state.samples_emitted += y.size
    return y


def vocode_step(state: VocoderState, frame: np.ndarray, weights) -> np.ndarray:
    """One mel frame -> exactly 600 samples in [-1, 1]."""
    x = _check(frame).reshape(1, -1)
    return vocode_chunk(state, x, weights)


def vocode_offline(mels, weights) -> np.ndarray:
    x = _check(mels)
    if x.ndim != 2 or x.shape[0] == 0:
        return np.zeros(0, np.float32)
    h = dense(x, weights["voc/in/w"], weights["voc/in/b"])
    for i, factor in enumerate(UPSAMPLE_FACTORS):
        h = transposed_conv_offline(leaky_relu(h, LEAKY_SLOPE), weights[f"voc/up{i}/w"],
                                    weights[f"voc/up{i}/b"], factor)
        for j, d in enumerate(RES_DILATIONS):
            pad = np.zeros(((RES_KERNEL - 1) * d, h.shape[1]), np.float32)
            h = _residual(h, np.concatenate([pad, leaky_relu(h, LEAKY_SLOPE)]),
                          f"voc/up{i}/res{j}/", weights, d)
    pad = np.zeros((VOCODER_OUT_KERNEL - 1, h.shape[1]), np.float32)
    y = causal_conv(np.concatenate([pad, leaky_relu(h, LEAKY_SLOPE)]),
                    weights["voc/out/w"], weights["voc/out/b"])
    return np.clip(np.tanh(y[:, 0]), -1.0, 1.0)

"""Post-training dynamic-range int8 quantization.

Weights are quantized symmetrically (zero point 0) with one scale per output
channel; the output channel is always the last axis. Activations are
quantized on the fly, one scale per row, and the integer products are
accumulated in int32 before rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DtypeError, NumericError

QMAX = 127


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    data: np.ndarray  # int8, same shape as the float tensor
    scales: np.ndarray  # float32, (shape[-1],) per-channel or (1,) per-tensor

    def __post_init__(self):
        if self.data.dtype != np.int8:
            raise DtypeError(f"quantized data must be int8, got {self.data.dtype}")
        if self.scales.ndim != 1 or self.scales.size not in (1, self.data.shape[-1]):
            raise DtypeError(
                f"scale count {self.scales.size} does not match output channels "
                f"{self.data.shape[-1]}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def zero_points(self):
        return np.zeros_like(self.scales, dtype=np.int32)

    @property
    def nbytes(self):
        return self.data.nbytes + self.scales.nbytes

    def dequantize(self) -> np.ndarray:
        return (self.data.astype(np.float64) * self.scales.astype(np.float64)).astype(np.float32)

    def __getitem__(self, index) -> "QuantizedTensor":
        """Index along leading axes; the channel axis and its scales are kept."""
        data = self.data[index]
        if data.ndim == 0 or data.shape[-1] != self.data.shape[-1]:
            raise IndexError("cannot index the output-channel axis of a quantized tensor")
        return QuantizedTensor(np.ascontiguousarray(data), self.scales)


def quantize_tensor(w: np.ndarray, policy: str = "per-channel") -> QuantizedTensor:
    w = np.asarray(w)
    if w.ndim < 1:
        raise ValueError("cannot quantize a scalar")
    if not np.all(np.isfinite(w)):
        raise NumericError("cannot quantize non-finite weights")
    w64 = w.astype(np.float64)
    if policy == "per-channel":
        amax = np.abs(w64).reshape(-1, w.shape[-1]).max(axis=0)
    elif policy == "per-tensor":
        amax = np.array([np.abs(w64).max() if w64.size else 0.0])
    else:
        raise ValueError(f"unknown quantization policy {policy!r}")
    scales = (amax / QMAX).astype(np.float32)
    scales[amax == 0] = 1.0
    # Scales are rounded to float32 first so that data * stored_scale is the
    # value actually reconstructed.
    q = np.rint(w64 / scales.astype(np.float64))
    q = np.clip(q, -QMAX, QMAX).astype(np.int8)
    return QuantizedTensor(q, scales)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.dequantize()


@numba.njit(cache=True)
def _qmatmul_kernel(x, wq, scales):
    rows, depth = x.shape
    cols = wq.shape[1]
    out = np.empty((rows, cols), np.float32)
    xq = np.empty(depth, np.int8)
    acc = np.empty(cols, np.int32)
    per_tensor = scales.shape[0] == 1
    for r in range(rows):
        amax = 0.0
        for i in range(depth):
            v = abs(np.float64(x[r, i]))
            if v > amax:
                amax = v
        sx = amax / 127.0 if amax > 0.0 else 1.0
        for i in range(depth):
            xq[i] = np.int8(min(127.0, max(-127.0, np.rint(np.float64(x[r, i]) / sx))))
        acc[:] = 0
        for i in range(depth):
            xi = np.int16(xq[i])
            if xi == 0:
                continue
            for c in range(cols):
                # |127 * 127| fits in int16; the running sum is int32.
                acc[c] += np.int16(xi * np.int16(wq[i, c]))
        for c in range(cols):
            s = scales[0] if per_tensor else scales[c]
            out[r, c] = np.float32(np.float64(acc[c]) * (sx * np.float64(s)))
    return out


def qmatmul(x: np.ndarray, q: QuantizedTensor) -> np.ndarray:
    """Row-wise dynamic-range product ``x @ q`` for 2-D ``x`` and a 2-D weight."""
    if q.ndim != 2:
        raise ValueError(f"qmatmul needs a 2-D weight, got shape {q.shape}")
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != q.shape[0]:
        raise ValueError(f"shape mismatch: x {x.shape} @ w {q.shape}")
    return _qmatmul_kernel(np.ascontiguousarray(x), q.data, q.scales)


def qmatvec(q: QuantizedTensor, x: np.ndarray) -> np.ndarray:
    """Dynamic-range product of a single vector with a quantized (in, out) weight."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 1:
        raise ValueError(f"qmatvec expects a vector, got shape {x.shape}")
    return qmatmul(x[None, :], q)[0]


def quantize_weights(weights, policy: str = "per-channel"):
    """Return a copy of ``weights`` with every matrix/kernel tensor in int8.

    Rank-1 tensors (biases, normalization parameters) stay float32.
    """
    from .model_io import ModelWeights

    if weights.is_quantized:
        raise DtypeError("model is already int8-quantized")
    tensors = {}
    for name, tensor in weights.tensors.items():
        if not np.all(np.isfinite(tensor)):
            raise NumericError(f"non-finite values in tensor {name!r}")
        tensors[name] = quantize_tensor(tensor, policy) if tensor.ndim >= 2 else tensor
    return ModelWeights(weights.config, tensors)


def _workspace_elems(config) -> int:
    from .config import DEC_ATTN_DIM, UPSAMPLE_FACTORS, vocoder_channels

    chans = vocoder_channels()
    samples = 1
    largest_voc = 0
    for i, factor in enumerate(UPSAMPLE_FACTORS):
        samples *= factor
        largest_voc = max(largest_voc, samples * chans[i + 1])
    dec = 4 * config.dec_dim + config.dec_dim + config.enc_dim
    att = config.k * (DEC_ATTN_DIM + 2)
    enc = 6 * config.enc_dim + config.enc_heads * config.enc_left_context
    # Two live buffers of the widest activation, float32.
    return 2 * max(largest_voc, dec, att, enc)


def state_bytes(config) -> int:
    """Bytes held by all streaming caches for one utterance."""
    from .config import (DEC_ATTN_DIM, N_FFT, POSTNET_CHANNELS, POSTNET_KERNEL,
                         POSTNET_LAYERS, RES_DILATIONS, RES_KERNEL, UPSAMPLE_FACTORS,
                         VOCODER_OUT_KERNEL, WINDOW_SAMPLES, vocoder_channels)

    frontend = 8 * (WINDOW_SAMPLES + config.mel_bins * (N_FFT // 2 + 1))
    per_block = 2 * config.enc_left_context * config.enc_dim + (config.conv_kernel - 1) * config.enc_dim
    encoder = 4 * (config.enc_layers * per_block + config.mel_bins)
    window = config.k * (config.enc_dim + DEC_ATTN_DIM + config.enc_dim)
    lstm = 2 * config.dec_layers * config.dec_dim
    post_in = [config.out_mels] + [POSTNET_CHANNELS] * (POSTNET_LAYERS - 1)
    postnet = (POSTNET_KERNEL - 1) * sum(post_in)
    decoder = 4 * (window + lstm + postnet + config.out_mels)
    chans = vocoder_channels()
    voc = 0
    for i in range(len(UPSAMPLE_FACTORS)):
        voc += chans[i]  # previous input frame of the transposed conv
        voc += sum((RES_KERNEL - 1) * d * chans[i + 1] for d in RES_DILATIONS)
    voc += (VOCODER_OUT_KERNEL - 1) * chans[-1]
    return frontend + encoder + decoder + 4 * voc


def size_report(weights) -> dict:
    """Exact serialized size and an estimate of peak resident memory."""
    from .model_io import serialized_size

    file_bytes = serialized_size(weights)
    weight_bytes = sum(t.nbytes for t in weights.tensors.values())
    est = weight_bytes + state_bytes(weights.config) + 4 * _workspace_elems(weights.config)
    return {"file_bytes": file_bytes, "est_peak_memory_bytes": int(est)}

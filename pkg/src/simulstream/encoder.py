"""Streaming causal conformer encoder.

Each block applies, in order and with a residual around every sub-layer but
the last: input projection, causal multi-head self-attention over a bounded
left context, a causal depthwise convolution (with pointwise projections on
either side), an output projection, then layer normalization.

Attention sees the current frame plus up to ``enc_left_context - 1`` earlier
frames, so the key/value history never holds more than ``enc_left_context``
entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import ENC_FRAME_MS, ModelConfig
from .errors import NumericError, SequencingError
from .frontend import MelFrame
from .ops import as_float, dense, depthwise_causal_conv, layer_norm, relu, softmax


@dataclass
class EncoderFrame:
    features: np.ndarray  # float32, (enc_dim,)
    index: int
    compute_ms: float = 0.0

    @property
    def covers_ms(self) -> tuple[int, int]:
        return (self.index * ENC_FRAME_MS, self.index * ENC_FRAME_MS + ENC_FRAME_MS)


@dataclass
class BlockCache:
    """Per-block streaming state: K/V history and conv left context."""

    keys: np.ndarray  # (capacity, dim)
    values: np.ndarray
    length: int
    conv: np.ndarray  # (kernel - 1, dim)

    @classmethod
    def create(cls, config: ModelConfig) -> "BlockCache":
        cap, dim = config.enc_left_context, config.enc_dim
        return cls(np.zeros((cap, dim), np.float32), np.zeros((cap, dim), np.float32), 0,
                   np.zeros((config.conv_kernel - 1, dim), np.float32))

    @property
    def capacity(self) -> int:
        return self.keys.shape[0]

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        if self.length == self.capacity:
            self.keys[:-1] = self.keys[1:]
            self.values[:-1] = self.values[1:]
            self.length -= 1
        self.keys[self.length] = k
        self.values[self.length] = v
        self.length += 1


@dataclass
class EncoderState:
    caches: list
    pending_mel: Optional[MelFrame] = None
    last_index: int = -1
    frames_emitted: int = 0

    @classmethod
    def create(cls, config: ModelConfig) -> "EncoderState":
        return cls([BlockCache.create(config) for _ in range(config.enc_layers)])


def subsample(frame_a, frame_b, weights) -> np.ndarray:
    """Concatenate two consecutive mel frames and project them to the model dim."""
    if isinstance(frame_a, MelFrame) and isinstance(frame_b, MelFrame):
        if frame_a.index % 2 or frame_b.index != frame_a.index + 1:
            raise SequencingError(
                f"subsample needs frames (2n, 2n+1), got ({frame_a.index}, {frame_b.index})")
        a, b = frame_a.bins, frame_b.bins
    else:
        a, b = np.asarray(frame_a), np.asarray(frame_b)
    x = np.concatenate([a, b]).astype(np.float32)[None, :]
    return _subsample_rows(x, weights)[0]


def _subsample_rows(pairs: np.ndarray, weights) -> np.ndarray:
    return relu(dense(pairs, weights["enc/subsample/w"], weights["enc/subsample/b"]))


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    return x.reshape(x.shape[0], heads, -1)


def attention_step(cache: BlockCache, x: np.ndarray, w: dict, heads: int):
    """Causal MHSA for one frame ``x`` of shape (1, dim); updates the K/V history.

    Returns the attention output (1, dim) and the weights (heads, history).
    """
    q = dense(x, w["attn/wq"], w["attn/bq"])
    k = dense(x, w["attn/wk"], w["attn/bk"])
    v = dense(x, w["attn/wv"], w["attn/bv"])
    cache.append(k[0], v[0])
    n = cache.length
    # logits can reach O(100) with sharp softmaxes; float64 keeps both paths in agreement
    qh = _split_heads(q.astype(np.float64), heads)[0]  # (heads, hd)
    kh = _split_heads(cache.keys[:n].astype(np.float64), heads)  # (n, heads, hd)
    vh = _split_heads(cache.values[:n].astype(np.float64), heads)
    logits = np.einsum("hd,nhd->hn", qh, kh) / np.sqrt(qh.shape[-1])
    probs = softmax(logits, axis=-1)
    ctx = np.einsum("hn,nhd->hd", probs, vh).reshape(1, -1).astype(np.float32)
    return dense(ctx, w["attn/wo"], w["attn/bo"]), probs.astype(np.float32)


def block_weights(weights, index: int) -> dict:
    prefix = f"enc/block{index}/"
    return {name[len(prefix):]: t for name, t in weights.tensors.items() if name.startswith(prefix)}


def conformer_block_step(cache: BlockCache, x: np.ndarray, w: dict, heads: int = 8,
                         block_index: int = 0, return_attention: bool = False):
    """Advance one block by one frame. ``x`` is (dim,) or (1, dim)."""
    x = np.asarray(x, dtype=np.float32).reshape(1, -1)
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite input to encoder block {block_index}")
    y1 = x + dense(x, w["in_proj/w"], w["in_proj/b"])
    att, probs = attention_step(cache, y1, w, heads)
    y2 = y1 + att
    pre = dense(y2, w["conv/pre_w"], w["conv/pre_b"])
    padded = np.concatenate([cache.conv, pre], axis=0)
    cache.conv = padded[1:]
    conv = depthwise_causal_conv(padded, as_float(w["conv/depthwise"]), w["conv/depthwise_b"])
    y3 = y2 + dense(conv, w["conv/post_w"], w["conv/post_b"])
    y4 = y3 + dense(y3, w["out_proj/w"], w["out_proj/b"])
    out = layer_norm(y4, w["ln/scale"], w["ln/bias"])[0]
    if return_attention:
        return out, probs
    return out


class Encoder:
    """Binds model weights to the streaming encoder ops."""

    def __init__(self, weights):
        self.weights = weights
        self.config: ModelConfig = weights.config
        self.blocks = [block_weights(weights, i) for i in range(self.config.enc_layers)]

    def new_state(self) -> EncoderState:
        return EncoderState.create(self.config)

    def step(self, state: EncoderState, mel: MelFrame) -> Optional[EncoderFrame]:
        return encode_step(state, mel, self.weights, blocks=self.blocks)


def encode_step(state: EncoderState, mel: MelFrame, weights, blocks=None) -> Optional[EncoderFrame]:
    """Buffer an even-indexed frame; on its odd partner emit one encoder frame."""
    if mel.index <= state.last_index:
        raise SequencingError(f"mel frame {mel.index} arrived after frame {state.last_index}")
    if mel.index != state.last_index + 1:
        raise SequencingError(f"mel frame {mel.index} skips frames after {state.last_index}")
    state.last_index = mel.index
    if state.pending_mel is None:
        state.pending_mel = mel
        return None
    first, state.pending_mel = state.pending_mel, None
    config = weights.config
    if blocks is None:
        blocks = [block_weights(weights, i) for i in range(config.enc_layers)]
    x = subsample(first, mel, weights)
    for i, (cache, w) in enumerate(zip(state.caches, blocks)):
        x = conformer_block_step(cache, x, w, config.enc_heads, block_index=i)
    frame = EncoderFrame(x, state.frames_emitted)
    state.frames_emitted += 1
    return frame


def _block_offline(x: np.ndarray, w: dict, config: ModelConfig) -> np.ndarray:
    """Whole-sequence block with an explicit causal band mask."""
    T, D = x.shape
    H, ctx = config.enc_heads, config.enc_left_context
    y1 = x + dense(x, w["in_proj/w"], w["in_proj/b"])
    q, k, v = (_split_heads(dense(y1, w[f"attn/w{n}"], w[f"attn/b{n}"]).astype(np.float64), H)
               .transpose(1, 0, 2) for n in "qkv")
    logits = q @ k.transpose(0, 2, 1) / np.sqrt(D // H)
    t = np.arange(T)
    lag = t[:, None] - t[None, :]
    visible = (lag >= 0) & (lag < ctx)
    logits = np.where(visible[None], logits, -np.inf)
    probs = softmax(logits, axis=-1)
    att = (probs @ v).transpose(1, 0, 2).reshape(T, D).astype(np.float32)
    y2 = y1 + dense(att, w["attn/wo"], w["attn/bo"])
    pre = dense(y2, w["conv/pre_w"], w["conv/pre_b"])
    kernel = as_float(w["conv/depthwise"])
    padded = np.concatenate([np.zeros((kernel.shape[0] - 1, D), np.float32), pre])
    conv = depthwise_causal_conv(padded, kernel, w["conv/depthwise_b"])
    y3 = y2 + dense(conv, w["conv/post_w"], w["conv/post_b"])
    y4 = y3 + dense(y3, w["out_proj/w"], w["out_proj/b"])
    return layer_norm(y4, w["ln/scale"], w["ln/bias"])


def encode_offline_array(mels: np.ndarray, weights) -> np.ndarray:
    """Full-sequence forward pass: ``(2N, mel_bins)`` -> ``(N, enc_dim)``."""
    config = weights.config
    mels = np.asarray(mels, dtype=np.float32)
    if mels.shape[0] % 2:
        raise SequencingError(f"offline encoding needs an even frame count, got {mels.shape[0]}")
    if mels.shape[0] == 0:
        return np.zeros((0, config.enc_dim), np.float32)
    x = _subsample_rows(mels.reshape(mels.shape[0] // 2, -1), weights)
    for i in range(config.enc_layers):
        x = _block_offline(x, block_weights(weights, i), config)
    return x


def encode_offline(mels: Sequence[MelFrame], weights) -> list[EncoderFrame]:
    mels = list(mels)
    for expected, mel in enumerate(mels):
        if mel.index != expected:
            raise SequencingError(f"offline input frame {expected} has index {mel.index}")
    arr = np.stack([m.bins for m in mels]) if mels else np.zeros((0, weights.config.mel_bins))
    return [EncoderFrame(row, i) for i, row in enumerate(encode_offline_array(arr, weights))]

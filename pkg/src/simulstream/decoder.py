"""Autoregressive spectrogram decoder with wait-k attention.

The decoder waits until ``k`` encoder frames (20 ms each) have arrived, then
emits 25 ms mel frames at the pace that keeps output duration matched to
input duration. Attention is single-head and only ever sees the ``k`` most
recent encoder frames.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .config import (DEC_ATTN_DIM, POSTNET_CHANNELS, POSTNET_KERNEL, POSTNET_LAYERS,
                     DecoderConfig, ModelConfig)
from .errors import SchedulingError
from .ops import causal_conv, dense, push_context, relu, sigmoid, softmax


class Action(enum.Enum):
    READ = "READ"
    WRITE = "WRITE"
    FINISH = "FINISH"


def paced_steps(frames_received: int, k: int, enc_frame_ms: int = 20, dec_frame_ms: int = 25) -> int:
    """Output steps allowed once ``frames_received`` encoder frames are in."""
    if frames_received < k:
        return 0
    return (frames_received - k + 1) * enc_frame_ms // dec_frame_ms


def schedule(frames_received: int, steps_emitted: int, k: int, source_done: bool, *,
             stop_seen: bool = False, max_steps: Optional[int] = None,
             enc_frame_ms: int = 20, dec_frame_ms: int = 25) -> Action:
    """Read/write decision from counters alone.

    ``stop_seen`` means a step taken after the source ended predicted stop;
    ``max_steps`` caps the total once the source has ended.
    """
    if frames_received < 0 or steps_emitted < 0:
        raise ValueError("counters must be non-negative")
    if not source_done:
        if frames_received < k:
            return Action.READ
        if steps_emitted < paced_steps(frames_received, k, enc_frame_ms, dec_frame_ms):
            return Action.WRITE
        return Action.READ
    if frames_received == 0 or stop_seen:
        return Action.FINISH
    if max_steps is not None and steps_emitted >= max_steps:
        return Action.FINISH
    return Action.WRITE


def initial_delay_ms(config) -> int:
    """Warm-up delay before the first write: k encoder frames of 20 ms."""
    enc_ms = getattr(config, "enc_frame_ms", 20)
    return config.k * enc_ms


@dataclass
class DecoderFrame:
    mel: np.ndarray  # (out_mels,) before the PostNet
    step: int
    stop_prob: float
    window: tuple  # (oldest, newest) encoder frame index attended


@dataclass
class DecoderState:
    window_frames: np.ndarray  # (k, enc_dim)
    window_keys: np.ndarray  # (k, attn_dim)
    window_values: np.ndarray  # (k, enc_dim)
    window_indices: np.ndarray  # (k,)
    h: np.ndarray  # (layers, dim)
    c: np.ndarray
    prev_frame: np.ndarray
    postnet_cache: list
    window_len: int = 0
    steps_emitted: int = 0
    frames_received: int = 0
    source_done: bool = False
    stop_seen: bool = False
    attention: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def window_span(self) -> tuple:
        if not self.window_len:
            return (-1, -1)
        return (int(self.window_indices[0]), int(self.window_indices[self.window_len - 1]))


def new_postnet_cache(out_mels: int) -> list:
    chans = [out_mels] + [POSTNET_CHANNELS] * (POSTNET_LAYERS - 1)
    return [np.zeros((POSTNET_KERNEL - 1, c), np.float32) for c in chans]


def new_state(model: ModelConfig, config: DecoderConfig) -> DecoderState:
    k, D = config.k, model.enc_dim
    return DecoderState(
        window_frames=np.zeros((k, D), np.float32),
        window_keys=np.zeros((k, DEC_ATTN_DIM), np.float32),
        window_values=np.zeros((k, D), np.float32),
        window_indices=np.full(k, -1, np.int64),
        h=np.zeros((config.lstm_layers, config.lstm_dim), np.float32),
        c=np.zeros((config.lstm_layers, config.lstm_dim), np.float32),
        prev_frame=np.zeros(config.out_mels, np.float32),
        postnet_cache=new_postnet_cache(config.out_mels),
    )


def _attend(query_proj: np.ndarray, keys: np.ndarray, values: np.ndarray):
    logits = (keys @ query_proj[0]) / np.float32(np.sqrt(keys.shape[1]))
    probs = softmax(logits)
    return (probs @ values)[None, :], probs


def waitk_attend(query: np.ndarray, window, weights):
    """Single-head dot-product attention over exactly the frames in ``window``.

    ``window`` is a sequence of encoder frames (objects with ``features`` or raw
    vectors). Returns ``(context (enc_dim,), weights (len(window),))``.
    """
    frames = [getattr(f, "features", f) for f in window]
    if not frames:
        raise SchedulingError("wait-k attention over an empty window")
    frames = np.stack(frames).astype(np.float32)
    q = dense(np.asarray(query, np.float32).reshape(1, -1), weights["dec/attn/wq"])
    keys = dense(frames, weights["dec/attn/wk"])
    values = dense(frames, weights["dec/attn/wv"])
    context, probs = _attend(q, keys, values)
    return context[0], probs


def receive(state: DecoderState, frame, weights) -> None:
    """Push one encoder frame into the wait-k window (evicting the oldest)."""
    if state.source_done:
        raise SchedulingError("encoder frame received after end of source")
    feats = np.asarray(getattr(frame, "features", frame), np.float32)
    index = getattr(frame, "index", state.frames_received)
    x = feats[None, :]
    key = dense(x, weights["dec/attn/wk"])[0]
    value = dense(x, weights["dec/attn/wv"])[0]
    k = state.window_frames.shape[0]
    n = state.window_len
    if n == k:
        for buf in (state.window_frames, state.window_keys, state.window_values, state.window_indices):
            buf[:-1] = buf[1:]
        n -= 1
    state.window_frames[n] = feats
    state.window_keys[n] = key
    state.window_values[n] = value
    state.window_indices[n] = index
    state.window_len = n + 1
    state.frames_received += 1


def prenet(prev: np.ndarray, weights) -> np.ndarray:
    x = relu(dense(prev, weights["dec/prenet/w1"], weights["dec/prenet/b1"]))
    return relu(dense(x, weights["dec/prenet/w2"], weights["dec/prenet/b2"]))


def decoder_step(state: DecoderState, weights, config: DecoderConfig) -> DecoderFrame:
    if state.window_len == 0 or (state.frames_received < config.k and not state.source_done):
        raise SchedulingError(
            f"decoder step with {state.frames_received} of k={config.k} frames buffered")
    p = prenet(state.prev_frame[None, :], weights)
    query = dense(state.h[-1:], weights["dec/attn/wq"])
    n = state.window_len
    context, probs = _attend(query, state.window_keys[:n], state.window_values[:n])
    state.attention = probs
    lower = p
    H = config.lstm_dim
    for i in range(config.lstm_layers):
        inp = np.concatenate([lower, context, state.h[i:i + 1]], axis=1)
        gates = dense(inp, weights[f"dec/lstm{i}/w"], weights[f"dec/lstm{i}/b"])[0]
        ig = sigmoid(gates[:H])
        fg = sigmoid(gates[H:2 * H])
        gg = np.tanh(gates[2 * H:3 * H])
        og = sigmoid(gates[3 * H:])
        state.c[i] = fg * state.c[i] + ig * gg
        state.h[i] = og * np.tanh(state.c[i])
        lower = state.h[i:i + 1]
    top = np.concatenate([lower, context], axis=1)
    mel = dense(top, weights["dec/out/mel_w"], weights["dec/out/mel_b"])[0]
    stop = float(sigmoid(dense(top, weights["dec/out/stop_w"], weights["dec/out/stop_b"]))[0, 0])
    frame = DecoderFrame(mel.astype(np.float32), state.steps_emitted, stop, state.window_span)
    state.prev_frame = frame.mel.copy()
    state.steps_emitted += 1
    if state.source_done and stop > config.stop_threshold:
        state.stop_seen = True
    return frame


def postnet_apply(cache: list, frame: np.ndarray, weights) -> np.ndarray:
    """Causal convolutional PostNet for one frame; ``cache`` is updated in place."""
    x = np.asarray(frame, np.float32).reshape(1, -1)
    h = x
    for i in range(POSTNET_LAYERS):
        padded, cache[i] = push_context(cache[i], h)
        h = causal_conv(padded, weights[f"dec/postnet{i}/w"], weights[f"dec/postnet{i}/b"])
        if i < POSTNET_LAYERS - 1:
            h = np.tanh(h)
    return (x + h)[0]


def postnet_offline(mels: np.ndarray, weights) -> np.ndarray:
    """PostNet over a whole ``(T, out_mels)`` sequence with zero left padding."""
    x = np.asarray(mels, np.float32)
    if x.shape[0] == 0:
        return x.copy()
    h = x
    for i in range(POSTNET_LAYERS):
        pad = np.zeros((POSTNET_KERNEL - 1, h.shape[1]), np.float32)
        h = causal_conv(np.concatenate([pad, h]), weights[f"dec/postnet{i}/w"],
                        weights[f"dec/postnet{i}/b"])
        if i < POSTNET_LAYERS - 1:
            h = np.tanh(h)
    return x + h


class Decoder:
    """Decoder bound to weights and a config, tracking the stop/flush rules."""

    def __init__(self, weights, config: Optional[DecoderConfig] = None):
        self.weights = weights
        self.config = config or DecoderConfig.from_model(weights.config)
        self.model_config = weights.config

    def new_state(self) -> DecoderState:
        return new_state(self.model_config, self.config)

    def max_steps(self, state: DecoderState) -> int:
        cfg = self.config
        paced = paced_steps(state.frames_received, cfg.k, cfg.enc_frame_ms, cfg.dec_frame_ms)
        return min(paced + cfg.max_flush_steps, 4 * state.frames_received)

    def decision(self, state: DecoderState) -> Action:
        cfg = self.config
        return schedule(state.frames_received, state.steps_emitted, cfg.k, state.source_done,
                        stop_seen=state.stop_seen,
                        max_steps=self.max_steps(state) if state.source_done else None,
                        enc_frame_ms=cfg.enc_frame_ms, dec_frame_ms=cfg.dec_frame_ms)

    def receive(self, state: DecoderState, frame) -> None:
        receive(state, frame, self.weights)

    def finish_source(self, state: DecoderState) -> None:
        state.source_done = True

    def step(self, state: DecoderState) -> DecoderFrame:
        return decoder_step(state, self.weights, self.config)

    def postnet(self, state: DecoderState, mel: np.ndarray) -> np.ndarray:
        return postnet_apply(state.postnet_cache, mel, self.weights)


def decode(frames: Iterable, weights, config: Optional[DecoderConfig] = None):
    """Run the schedule over a finite encoder-frame sequence.

    Returns the raw decoder frames and the PostNet-refined mels ``(steps, out_mels)``.
    """
    dec = Decoder(weights, config)
    state = dec.new_state()
    source = iter(frames)
    out, refined = [], []
    while True:
        action = dec.decision(state)
        if action is Action.READ:
            frame = next(source, None)
            if frame is None:
                dec.finish_source(state)
            else:
                dec.receive(state, frame)
        elif action is Action.WRITE:
            f = dec.step(state)
            out.append(f)
            refined.append(dec.postnet(state, f.mel))
        else:
            break
    mels = np.stack(refined) if refined else np.zeros((0, dec.config.out_mels), np.float32)
    return out, mels

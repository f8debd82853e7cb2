"""Configuration dataclasses and fixed architecture constants."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError

# Audio framing (16 kHz input).
PACKET_SAMPLES = 320
WINDOW_SAMPLES = 400
HOP_SAMPLES = 160
N_FFT = 512
FRONTEND_F_MIN = 125.0
FRONTEND_F_MAX = 7600.0
FLOOR_EPSILON = 1e-5

ENC_FRAME_MS = 20
DEC_FRAME_MS = 25

LAYERNORM_EPS = 1e-6

# Decoder internals the model config does not expose.
PRENET_DIM = 256
DEC_ATTN_DIM = 256
POSTNET_LAYERS = 5
POSTNET_KERNEL = 5
POSTNET_CHANNELS = 256

# Vocoder generator topology.
VOCODER_CHANNELS = 256
UPSAMPLE_FACTORS = (5, 5, 4, 6)
RES_KERNEL = 3
RES_DILATIONS = (1, 3)
VOCODER_OUT_KERNEL = 7
LEAKY_SLOPE = 0.2


def vocoder_channels() -> list[int]:
    """Channel count entering each stage, plus the final stage's width."""
    chans = [VOCODER_CHANNELS]
    for _ in UPSAMPLE_FACTORS:
        chans.append(chans[-1] // 2)
    return chans


def _default_rates():
    return {"in": 16000, "out": 24000}


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int = 16
    enc_dim: int = 256
    enc_heads: int = 8
    enc_left_context: int = 65
    conv_kernel: int = 32
    dec_layers: int = 6
    dec_dim: int = 768
    k: int = 150
    out_mels: int = 128
    mel_bins: int = 80
    rates: dict = field(default_factory=_default_rates)

    def __post_init__(self):
        for name in ("enc_layers", "enc_dim", "enc_heads", "enc_left_context",
                     "conv_kernel", "dec_layers", "dec_dim", "k", "out_mels", "mel_bins"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.enc_dim % self.enc_heads:
            raise ConfigError(f"enc_dim {self.enc_dim} not divisible by enc_heads {self.enc_heads}")
        if set(self.rates) != {"in", "out"}:
            raise ConfigError(f"rates must have keys 'in' and 'out', got {sorted(self.rates)}")
        if self.rates["in"] != 16000:
            raise ConfigError("input rate is fixed at 16000 Hz (no resampling)")
        if self.rates["out"] * DEC_FRAME_MS != 1000 * math.prod(UPSAMPLE_FACTORS):
            raise ConfigError(
                f"output rate {self.rates['out']} incompatible with "
                f"{math.prod(UPSAMPLE_FACTORS)} samples per {DEC_FRAME_MS} ms frame")

    @property
    def in_rate(self) -> int:
        return self.rates["in"]

    @property
    def out_rate(self) -> int:
        return self.rates["out"]

    @property
    def head_dim(self) -> int:
        return self.enc_dim // self.enc_heads

    def replace(self, **changes) -> "ModelConfig":
        data = asdict(self)
        data.update(changes)
        return ModelConfig(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_json(Path(path).read_text())


def desk_config(dec_dim: int = 256, dec_layers: int = 4, k: int = 10, **overrides) -> ModelConfig:
    """Small configuration for tests and laptop demos (2 encoder layers)."""
    overrides.setdefault("enc_layers", 2)
    return ModelConfig(dec_dim=dec_dim, dec_layers=dec_layers, k=k, **overrides)


@dataclass(frozen=True)
class DecoderConfig:
    k: int = 150
    lstm_layers: int = 6
    lstm_dim: int = 768
    out_mels: int = 128
    dec_frame_ms: int = DEC_FRAME_MS
    enc_frame_ms: int = ENC_FRAME_MS
    stop_threshold: float = 0.5
    max_flush_steps: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.max_flush_steps is None:
            # Enough trailing steps to cover the k-frame warm-up lag.
            object.__setattr__(self, "max_flush_steps",
                               -(-self.k * self.enc_frame_ms // self.dec_frame_ms))

    @classmethod
    def from_model(cls, config: ModelConfig, **overrides) -> "DecoderConfig":
        return cls(k=config.k, lstm_layers=config.dec_layers, lstm_dim=config.dec_dim,
                   out_mels=config.out_mels, **overrides)


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "concurrent"
    realtime_pacing: bool = False
    channel_capacity: int = 256
    k: Optional[int] = None
    model_path: Optional[str] = None
    config_path: Optional[str] = None

    def __post_init__(self):
        if self.mode not in ("concurrent", "sequential"):
            raise ConfigError(f"mode must be 'concurrent' or 'sequential', got {self.mode!r}")
        if self.channel_capacity < 1:
            raise ConfigError("channel_capacity must be >= 1")
        if self.k is not None and self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")

    def check_k(self, k: int) -> None:
        if self.mode == "concurrent" and self.channel_capacity < k:
            raise ConfigError(
                f"channel_capacity {self.channel_capacity} < k={k} in concurrent mode")

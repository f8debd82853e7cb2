"""Model weights: tensor layout, seeded initialization and the SMWT container.

File layout (all integers little-endian)::

    magic "SMWT" | version u16 | tensor_count u32
    per tensor: name_len u16, name utf-8, dtype u8 (0=f32, 1=i8), rank u8,
                dims u32 * rank, scale_count u32, scales f32 * scale_count,
                payload

Float tensors carry no scales; int8 tensors carry one scale per output
channel (last axis) or a single per-tensor scale.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from .config import (DEC_ATTN_DIM, POSTNET_CHANNELS, POSTNET_KERNEL, POSTNET_LAYERS,
                     PRENET_DIM, RES_DILATIONS, RES_KERNEL, UPSAMPLE_FACTORS,
                     VOCODER_OUT_KERNEL, ModelConfig, vocoder_channels)
from .errors import ConfigError, CorruptHeaderError, DtypeError, TruncatedFileError
from .quantization import QuantizedTensor

MAGIC = b"SMWT"
VERSION = 1
DTYPE_F32 = 0
DTYPE_I8 = 1
HEADER_BYTES = 4 + 2 + 4

Tensor = Union[np.ndarray, QuantizedTensor]


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple
    kind: str  # "dense", "bias", "scale"
    fan_in: int = 1


def _dense(name, shape, fan_in=None):
    return TensorSpec(name, tuple(shape), "dense", fan_in or math.prod(shape[:-1]))


def _bias(name, size):
    return TensorSpec(name, (size,), "bias")


def tensor_specs(config: ModelConfig) -> list[TensorSpec]:
    """Every tensor of the model, in serialization order."""
    D, M = config.enc_dim, config.mel_bins
    H, L = config.dec_dim, config.dec_layers
    specs = [_dense("enc/subsample/w", (2 * M, D)), _bias("enc/subsample/b", D)]
    for i in range(config.enc_layers):
        p = f"enc/block{i}/"
        specs += [_dense(p + "in_proj/w", (D, D)), _bias(p + "in_proj/b", D)]
        for proj in ("q", "k", "v", "o"):
            specs += [_dense(p + f"attn/w{proj}", (D, D)), _bias(p + f"attn/b{proj}", D)]
        specs += [
            _dense(p + "conv/pre_w", (D, D)), _bias(p + "conv/pre_b", D),
            _dense(p + "conv/depthwise", (config.conv_kernel, D)), _bias(p + "conv/depthwise_b", D),
            _dense(p + "conv/post_w", (D, D)), _bias(p + "conv/post_b", D),
            _dense(p + "out_proj/w", (D, D)), _bias(p + "out_proj/b", D),
            TensorSpec(p + "ln/scale", (D,), "scale"), _bias(p + "ln/bias", D),
        ]

    specs += [
        _dense("dec/prenet/w1", (config.out_mels, PRENET_DIM)), _bias("dec/prenet/b1", PRENET_DIM),
        _dense("dec/prenet/w2", (PRENET_DIM, PRENET_DIM)), _bias("dec/prenet/b2", PRENET_DIM),
        _dense("dec/attn/wq", (H, DEC_ATTN_DIM)),
        _dense("dec/attn/wk", (D, DEC_ATTN_DIM)),
        _dense("dec/attn/wv", (D, D)),
    ]
    for i in range(L):
        width = (PRENET_DIM if i == 0 else H) + D + H
        specs += [_dense(f"dec/lstm{i}/w", (width, 4 * H)), _bias(f"dec/lstm{i}/b", 4 * H)]
    specs += [
        _dense("dec/out/mel_w", (H + D, config.out_mels)), _bias("dec/out/mel_b", config.out_mels),
        _dense("dec/out/stop_w", (H + D, 1)), _bias("dec/out/stop_b", 1),
    ]
    chans = [config.out_mels] + [POSTNET_CHANNELS] * (POSTNET_LAYERS - 1) + [config.out_mels]
    for i in range(POSTNET_LAYERS):
        specs += [_dense(f"dec/postnet{i}/w", (POSTNET_KERNEL, chans[i], chans[i + 1])),
                  _bias(f"dec/postnet{i}/b", chans[i + 1])]

    vc = vocoder_channels()
    specs += [_dense("voc/in/w", (config.out_mels, vc[0])), _bias("voc/in/b", vc[0])]
    for i, factor in enumerate(UPSAMPLE_FACTORS):
        cin, cout = vc[i], vc[i + 1]
        # Each output sample of a kernel-2s stride-s transposed conv sees 2 inputs.
        specs += [_dense(f"voc/up{i}/w", (2 * factor, cin, cout), fan_in=2 * cin),
                  _bias(f"voc/up{i}/b", cout)]
        for j, _ in enumerate(RES_DILATIONS):
            r = f"voc/up{i}/res{j}/"
            specs += [_dense(r + "w1", (RES_KERNEL, cout, cout)), _bias(r + "b1", cout),
                      _dense(r + "w2", (cout, cout)), _bias(r + "b2", cout)]
    specs += [_dense("voc/out/w", (VOCODER_OUT_KERNEL, vc[-1], 1)), _bias("voc/out/b", 1)]
    return specs


class ModelWeights:
    """Named tensors plus the config that fixes their shapes."""

    def __init__(self, config: ModelConfig, tensors: dict):
        self.config = config
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def is_quantized(self) -> bool:
        return any(isinstance(t, QuantizedTensor) for t in self.tensors.values())

    def with_config(self, **changes) -> "ModelWeights":
        """Same tensors with non-structural config changes (e.g. a different k)."""
        return ModelWeights(self.config.replace(**changes), self.tensors)

    def copy(self) -> "ModelWeights":
        out = {}
        for name, t in self.tensors.items():
            if isinstance(t, QuantizedTensor):
                out[name] = QuantizedTensor(t.data.copy(), t.scales.copy())
            else:
                out[name] = t.copy()
        return ModelWeights(self.config, out)


def init_random(config: ModelConfig, seed: int = 0) -> ModelWeights:
    """Deterministic weights: dense ~ N(0, 1/fan_in), biases 0, norm scales 1."""
    tensors = {}
    for index, spec in enumerate(tensor_specs(config)):
        if spec.kind == "dense":
            rng = np.random.default_rng([seed, index])
            w = rng.standard_normal(spec.shape, dtype=np.float32)
            w *= np.float32(1.0 / math.sqrt(spec.fan_in))
        elif spec.kind == "scale":
            w = np.ones(spec.shape, np.float32)
        else:
            w = np.zeros(spec.shape, np.float32)
        tensors[spec.name] = w
    return ModelWeights(config, tensors)


def _entry_size(name: str, shape: tuple, dtype: int, scale_count: int) -> int:
    elems = math.prod(shape)
    payload = elems * (4 if dtype == DTYPE_F32 else 1)
    return 2 + len(name.encode("utf-8")) + 1 + 1 + 4 * len(shape) + 4 + 4 * scale_count + payload


def predicted_file_size(config: ModelConfig, dtype: str = "f32", policy: str = "per-channel") -> int:
    """Exact byte size of the file ``save`` would write, computed from the config alone."""
    if dtype not in ("f32", "i8"):
        raise ConfigError(f"dtype must be 'f32' or 'i8', got {dtype!r}")
    total = HEADER_BYTES
    for spec in tensor_specs(config):
        if dtype == "i8" and len(spec.shape) >= 2:
            scales = spec.shape[-1] if policy == "per-channel" else 1
            total += _entry_size(spec.name, spec.shape, DTYPE_I8, scales)
        else:
            total += _entry_size(spec.name, spec.shape, DTYPE_F32, 0)
    return total


def serialized_size(weights: ModelWeights) -> int:
    total = HEADER_BYTES
    for name, t in weights.tensors.items():
        if isinstance(t, QuantizedTensor):
            total += _entry_size(name, t.shape, DTYPE_I8, t.scales.size)
        else:
            total += _entry_size(name, t.shape, DTYPE_F32, 0)
    return total


def _encode(weights: ModelWeights) -> Iterator[bytes]:
    yield MAGIC + struct.pack("<HI", VERSION, len(weights.tensors))
    for name, t in weights.tensors.items():
        raw = name.encode("utf-8")
        if isinstance(t, QuantizedTensor):
            dtype, shape, scales = DTYPE_I8, t.shape, t.scales.astype("<f4")
            payload = t.data.astype(np.int8)
        else:
            if t.dtype != np.float32:
                raise DtypeError(f"tensor {name!r} has dtype {t.dtype}, expected float32")
            dtype, shape, scales = DTYPE_F32, t.shape, np.zeros(0, "<f4")
            payload = t.astype("<f4")
        yield struct.pack("<H", len(raw)) + raw
        yield struct.pack("<BB", dtype, len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
        yield struct.pack("<I", scales.size) + scales.tobytes()
        yield np.ascontiguousarray(payload).tobytes()


def save(weights: ModelWeights, path) -> int:
    """Write ``weights`` to ``path``; returns the number of bytes written."""
    written = 0
    with open(path, "wb") as fh:
        for chunk in _encode(weights):
            fh.write(chunk)
            written += len(chunk)
    return written


def to_bytes(weights: ModelWeights) -> bytes:
    return b"".join(_encode(weights))


def file_sha256(weights: ModelWeights) -> str:
    h = hashlib.sha256()
    for chunk in _encode(weights):
        h.update(chunk)
    return h.hexdigest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int, what: str, tensor: Optional[str] = None) -> memoryview:
        if self.pos + n > len(self.buf):
            where = f" in tensor {tensor!r}" if tensor else ""
            raise TruncatedFileError(
                f"file truncated reading {what}{where}: need {n} bytes at offset "
                f"{self.pos}, have {len(self.buf) - self.pos}", tensor)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str, tensor: Optional[str] = None):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what, tensor))


def from_bytes(buf: bytes, config: Optional[ModelConfig] = None) -> ModelWeights:
    r = _Reader(buf)
    if len(buf) < HEADER_BYTES:
        raise CorruptHeaderError(f"file too short for header ({len(buf)} bytes)")
    magic = bytes(r.take(4, "magic"))
    if magic != MAGIC:
        raise CorruptHeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count = r.unpack("<HI", "header")
    if version != VERSION:
        raise CorruptHeaderError(f"unsupported version {version}")
    tensors = {}
    for index in range(count):
        (name_len,) = r.unpack("<H", "name length", f"#{index}")
        try:
            name = bytes(r.take(name_len, "name", f"#{index}")).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptHeaderError(f"tensor #{index} has a non-UTF-8 name") from None
        dtype, rank = r.unpack("<BB", "dtype/rank", name)
        if dtype not in (DTYPE_F32, DTYPE_I8):
            raise DtypeError(f"tensor {name!r} has unknown dtype tag {dtype}")
        dims = r.unpack(f"<{rank}I", "dims", name) if rank else ()
        (scale_count,) = r.unpack("<I", "scale count", name)
        if dtype == DTYPE_F32 and scale_count:
            raise DtypeError(f"float tensor {name!r} carries {scale_count} scales")
        if dtype == DTYPE_I8 and (rank == 0 or scale_count not in (1, dims[-1])):
            raise DtypeError(f"int8 tensor {name!r} has {scale_count} scales for shape {dims}")
        scales = np.frombuffer(r.take(4 * scale_count, "scales", name), "<f4").astype(np.float32)
        elems = math.prod(dims)
        if dtype == DTYPE_F32:
            data = np.frombuffer(r.take(4 * elems, "payload", name), "<f4")
            tensors[name] = data.astype(np.float32).reshape(dims)
        else:
            data = np.frombuffer(r.take(elems, "payload", name), np.int8)
            tensors[name] = QuantizedTensor(data.copy().reshape(dims), scales)
    if r.pos != len(buf):
        raise CorruptHeaderError(f"{len(buf) - r.pos} trailing bytes after last tensor")
    if config is None:
        config = infer_config(tensors)
    return ModelWeights(config, tensors)


def load(path, config: Optional[ModelConfig] = None) -> ModelWeights:
    return from_bytes(Path(path).read_bytes(), config)


def check_weights(weights: ModelWeights) -> None:
    """Raise ConfigError unless the tensors match the config's expected layout."""
    expected = {spec.name: spec.shape for spec in tensor_specs(weights.config)}
    actual = {name: tuple(t.shape) for name, t in weights.tensors.items()}
    missing = sorted(set(expected) - set(actual))
    extra = sorted(set(actual) - set(expected))
    wrong = sorted(n for n in set(expected) & set(actual) if expected[n] != actual[n])
    if missing or extra or wrong:
        detail = []
        if missing:
            detail.append(f"missing {missing[:3]}")
        if extra:
            detail.append(f"unexpected {extra[:3]}")
        if wrong:
            detail.append(f"shape mismatch {[(n, actual[n], expected[n]) for n in wrong[:3]]}")
        raise ConfigError("weights do not match config: " + "; ".join(detail))


def infer_config(tensors: dict, k: int = ModelConfig.k) -> ModelConfig:
    """Recover the structural config from tensor names and shapes.

    Head count and attention context are not visible in shapes; defaults are
    assumed for them.
    """
    try:
        enc_layers = sum(1 for n in tensors if n.startswith("enc/block") and n.endswith("/ln/scale"))
        dec_layers = sum(1 for n in tensors if n.startswith("dec/lstm") and n.endswith("/w"))
        two_m, enc_dim = tensors["enc/subsample/w"].shape
        dec_dim = tensors["dec/attn/wq"].shape[0]
        out_mels = tensors["dec/out/mel_w"].shape[1]
        kernel = tensors["enc/block0/conv/depthwise"].shape[0] if enc_layers else ModelConfig.conv_kernel
    except KeyError as exc:
        raise ConfigError(f"cannot infer config: missing tensor {exc}") from None
    return ModelConfig(enc_layers=enc_layers, enc_dim=enc_dim, conv_kernel=kernel,
                       dec_layers=dec_layers, dec_dim=dec_dim, k=k,
                       out_mels=out_mels, mel_bins=two_m // 2)

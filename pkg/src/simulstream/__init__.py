"""Streaming simultaneous speech-to-speech translation runtime.

Causal log-mel frontend, causal conformer encoder, wait-k spectrogram decoder
and streaming vocoder, with concurrent two-stage execution, int8
dynamic-range quantization and a latency/RTF benchmark.
"""

from .config import DecoderConfig, ModelConfig, PipelineConfig, desk_config
from .model_io import ModelWeights, init_random, load, save
from .pipeline import StreamingPipeline, compute_rtf, feasibility_check, run_offline, run_streaming

__version__ = "0.1.0"

__all__ = [
    "DecoderConfig", "ModelConfig", "PipelineConfig", "desk_config",
    "ModelWeights", "init_random", "load", "save",
    "StreamingPipeline", "compute_rtf", "feasibility_check", "run_offline", "run_streaming",
]

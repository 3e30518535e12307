"""Streaming recognition with a Mamba encoder, convolutional lookahead and unimodal aggregation."""

from .engine import Emission, Model, StreamHandle, Trigger, offline_recognize, stream_recognize
from .weights import ModelConfig, TensorBundle, init_random, load_bundle, save_bundle

__all__ = [
    "Emission",
    "Model",
    "ModelConfig",
    "StreamHandle",
    "TensorBundle",
    "Trigger",
    "init_random",
    "load_bundle",
    "offline_recognize",
    "save_bundle",
    "stream_recognize",
]

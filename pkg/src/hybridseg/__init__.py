"""Hybrid CNN / token-transformer semantic segmentation of aerial imagery with
elevation data, built on a small numpy autodiff engine."""

from .config import ModelConfig, TrainConfig, load_config, parse_config
from .data import Scene, synth_dataset, synth_scene
from .model import HybridSegNet, build_model
from .train import Checkpoint, evaluate, predict, train

__all__ = ["ModelConfig", "TrainConfig", "load_config", "parse_config", "Scene",
           "synth_dataset", "synth_scene", "HybridSegNet", "build_model",
           "Checkpoint", "evaluate", "predict", "train"]
__version__ = "0.1.0"

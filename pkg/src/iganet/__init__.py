"""Interweaved graph-convolution / attention network for 2D-to-3D human pose lifting."""

from .model import ModelConfig, ModelParams, count_params, forward, init_params, load_params, save_params
from .skeleton import SkeletonGraph, build_h36m_17, horizontal_flip, normalize_adjacency
from .tensor import GradTape, Tensor
from .training import TrainConfig, evaluate, train

__all__ = [
    "GradTape", "ModelConfig", "ModelParams", "SkeletonGraph", "Tensor", "TrainConfig",
    "build_h36m_17", "count_params", "evaluate", "forward", "horizontal_flip", "init_params",
    "load_params", "normalize_adjacency", "save_params", "train",
]

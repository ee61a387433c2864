"""From-scratch two-stream 3D residual network with exact gradients."""

from .layers import (
    BatchNorm3d,
    Conv3d,
    GlobalAvgPool,
    Linear,
    MaxPool3d,
    ReLU,
    sigmoid,
    xavier_init,
)
from .blocks import BottleneckBlock3d
from .model import DEPTH_CONFIGS, ModelConfig, TwoStreamModel, clips_to_batch
from .loss import LossBatch, bce_logit_grad, class_weights, weighted_bce
from .optim import AdamW
from .train import TrainConfig, train, predict_scan, ensemble_predict
from .checkpoint import load_checkpoint, save_checkpoint, swap_head

__all__ = [
    "AdamW",
    "BatchNorm3d",
    "BottleneckBlock3d",
    "Conv3d",
    "DEPTH_CONFIGS",
    "GlobalAvgPool",
    "Linear",
    "LossBatch",
    "MaxPool3d",
    "ModelConfig",
    "ReLU",
    "TrainConfig",
    "TwoStreamModel",
    "bce_logit_grad",
    "class_weights",
    "clips_to_batch",
    "ensemble_predict",
    "load_checkpoint",
    "predict_scan",
    "save_checkpoint",
    "sigmoid",
    "swap_head",
    "train",
    "weighted_bce",
    "xavier_init",
]

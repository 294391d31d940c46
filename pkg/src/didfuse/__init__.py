"""Deep image decomposition autoencoder for infrared/visible image fusion."""

from .fusion import L1Norm, Summation, WeightedAverage, fuse_images, fuse_maps
from .loss import LossBreakdown, LossWeights, total_loss
from .net import ModelParams, decompose, init_params, reconstruct
from .trainer import TrainConfig, train

__all__ = [
    "L1Norm", "Summation", "WeightedAverage", "fuse_images", "fuse_maps",
    "LossBreakdown", "LossWeights", "total_loss",
    "ModelParams", "decompose", "init_params", "reconstruct",
    "TrainConfig", "train",
]
__version__ = "0.1.0"

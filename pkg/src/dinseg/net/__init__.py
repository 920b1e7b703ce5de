"""From-scratch tensor engine: layers, the interactive network, training."""

from .layers import softmax, weighted_ce
from .model import DIM_VARIANTS, DinModel, NetConfig, build_model, dim_forward, forward_probs, predict
from .optim import Adam

__all__ = [
    "softmax",
    "weighted_ce",
    "DIM_VARIANTS",
    "DinModel",
    "NetConfig",
    "build_model",
    "dim_forward",
    "forward_probs",
    "predict",
    "Adam",
]

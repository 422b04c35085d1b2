from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    FramewiseDense,
    Parameter,
    ReLU,
    Residual,
    Sequential,
    cross_entropy_from_logits,
    log_softmax,
    softmax,
)
from .netspec import build_network, netspec_hash, parameter_count
from .optim import Adam
from .gradcheck import grad_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv2d",
    "Dense",
    "FramewiseDense",
    "Parameter",
    "ReLU",
    "Residual",
    "Sequential",
    "build_network",
    "cross_entropy_from_logits",
    "grad_check",
    "load_checkpoint",
    "log_softmax",
    "netspec_hash",
    "parameter_count",
    "save_checkpoint",
    "softmax",
]

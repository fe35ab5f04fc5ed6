from . import autodiff
from .autodiff import Tensor, backward
from .gaussian import GaussianHead, entropy, gaussian_log_density, reparameterized_sample
from .mlp import STD_FLOOR, DiagonalGaussian, Mlp
from .optim import OptimizerState, optimizer_step

__all__ = [
    "autodiff",
    "Tensor",
    "backward",
    "GaussianHead",
    "entropy",
    "gaussian_log_density",
    "reparameterized_sample",
    "STD_FLOOR",
    "DiagonalGaussian",
    "Mlp",
    "OptimizerState",
    "optimizer_step",
]

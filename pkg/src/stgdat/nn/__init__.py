"""Minimal float64 differentiable numerics: tensors, layers, Adam, gradient checks."""
from .gradcheck import grad_check, relative_error
from .layers import MLP, Conv2d, Dense, GRUCell, conv2d_forward, dense_forward, gru_step
from .optim import NonFiniteGradient, OptimizerConfig, clip_grad_norm, optimizer_step
from .params import ParamStore
from .tensor import Tensor, no_grad

__all__ = [
    "Tensor", "no_grad", "ParamStore", "Dense", "MLP", "GRUCell", "Conv2d",
    "dense_forward", "gru_step", "conv2d_forward", "OptimizerConfig", "optimizer_step",
    "clip_grad_norm", "NonFiniteGradient", "grad_check", "relative_error",
]

"""Numeric substrate: autodiff tensors, seeded streams, Adam."""

from .autograd import (
    LAYERNORM_EPS,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    attention,
    backward,
    broadcast_to,
    concat,
    exp,
    gather,
    huber,
    layer_norm,
    linear,
    log_softmax,
    masked_mean,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    scatter,
    sinusoidal_encoding,
    softmax,
    sub,
    topological_order,
    transpose,
    tsum,
    tmean,
    where,
)
from .optim import ParamStore, adam_step
from .rng import RngStream, mix

__all__ = [
    "LAYERNORM_EPS",
    "ParamStore",
    "RngStream",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "attention",
    "backward",
    "broadcast_to",
    "concat",
    "exp",
    "gather",
    "huber",
    "layer_norm",
    "linear",
    "log_softmax",
    "masked_mean",
    "matmul",
    "mix",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "scatter",
    "sinusoidal_encoding",
    "softmax",
    "sub",
    "topological_order",
    "transpose",
    "tsum",
    "tmean",
    "where",
]

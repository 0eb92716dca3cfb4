"""Dense float64 tensors with reverse-mode autodiff, layers and Adam."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Conv1d, Dropout, LayerNorm, Linear, Module, sinusoidal_table
from .optim import Adam, AdamState, adam_step, lr_schedule
from .tensor import (
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    conv1d,
    debug_numerics,
    div,
    dropout,
    elu,
    layernorm,
    masked_fill,
    matmul,
    maxpool1d,
    mean,
    mse_loss,
    mul,
    no_grad,
    put_rows,
    relu,
    reshape,
    slice_,
    softmax,
    sub,
    sum_,
    take_rows,
    transpose,
)

__all__ = [
    "Adam",
    "AdamState",
    "Conv1d",
    "Dropout",
    "LayerNorm",
    "Linear",
    "Module",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "broadcast_to",
    "concat",
    "conv1d",
    "debug_numerics",
    "div",
    "dropout",
    "elu",
    "layernorm",
    "load_checkpoint",
    "lr_schedule",
    "masked_fill",
    "matmul",
    "maxpool1d",
    "mean",
    "mse_loss",
    "mul",
    "no_grad",
    "put_rows",
    "relu",
    "reshape",
    "save_checkpoint",
    "sinusoidal_table",
    "slice_",
    "softmax",
    "sub",
    "sum_",
    "take_rows",
    "transpose",
]

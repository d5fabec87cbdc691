"""Minimal dense reverse-mode differentiation in float64."""

from .check import grad_check
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    concat,
    constant,
    div,
    exp,
    gather_rows,
    log,
    matmul,
    mean,
    mul,
    neighbor_mean,
    power,
    relu,
    row_l2_normalize,
    row_log_softmax,
    row_softmax,
    sigmoid,
    stop_gradient,
    straight_through,
    sub,
    sum,
    transpose,
)

__all__ = [
    "AdamState", "Tape", "Tensor", "adam_step", "add", "as_tensor", "concat", "constant",
    "div", "exp", "gather_rows", "grad_check", "load_checkpoint", "log", "matmul", "mean",
    "mul", "neighbor_mean", "power", "relu", "row_l2_normalize", "row_log_softmax",
    "row_softmax", "save_checkpoint", "sigmoid", "stop_gradient", "straight_through", "sub",
    "sum", "transpose",
]

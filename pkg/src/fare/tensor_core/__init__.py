from .functional import avgpool, avgpool2, conv2d, flatten, linear, mae_loss, triplet_loss
from .gradcheck import grad_check
from .optim import AdamaxState, NonFiniteGradientError, adamax_step
from .tensor import (Tensor, absolute, add, concat, matmul, mean_all, mul, no_grad, relu, reshape, row_norm, sub,
                     sum_all, take_rows)

__all__ = [
    "AdamaxState",
    "NonFiniteGradientError",
    "Tensor",
    "absolute",
    "add",
    "adamax_step",
    "avgpool",
    "avgpool2",
    "concat",
    "conv2d",
    "flatten",
    "grad_check",
    "linear",
    "mae_loss",
    "matmul",
    "mean_all",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "row_norm",
    "sub",
    "sum_all",
    "take_rows",
    "triplet_loss",
]

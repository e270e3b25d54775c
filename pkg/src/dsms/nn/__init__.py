from .checkpoint import load_checkpoint, save_checkpoint
from .layers import NonFiniteError, add_lstm, add_mlp, dense, lstm_step, mlp, uniform_init
from .optim import ParameterStore, adam_update, clip_grad_norm
from .tensor import (
    Tensor,
    Trace,
    add,
    as_tensor,
    backward,
    ceil_st,
    concat,
    constants,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    stop_grad,
    sub,
    tanh,
    tsum,
)

__all__ = [
    "NonFiniteError",
    "ParameterStore",
    "Tensor",
    "Trace",
    "adam_update",
    "add",
    "add_lstm",
    "add_mlp",
    "as_tensor",
    "backward",
    "ceil_st",
    "clip_grad_norm",
    "concat",
    "constants",
    "dense",
    "exp",
    "getitem",
    "load_checkpoint",
    "log",
    "lstm_step",
    "matmul",
    "mean",
    "mlp",
    "mul",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "square",
    "stop_grad",
    "sub",
    "tanh",
    "tsum",
    "uniform_init",
]

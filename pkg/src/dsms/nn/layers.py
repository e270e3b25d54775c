from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..errors import ShapeError
from .optim import ParameterStore
from .tensor import Tensor, add, as_tensor, concat, matmul, relu, sigmoid, tanh

ACTIVATIONS = {
    "linear": lambda x: x,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


class NonFiniteError(FloatingPointError):
    pass


def _guard(t: Tensor, where: str) -> Tensor:
    if not np.isfinite(t.value).all():
        raise NonFiniteError(f"non-finite values after {where}")
    return t


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def dense(x, W, bias, activation: str = "linear") -> Tensor:
    x, W, bias = as_tensor(x), as_tensor(W), as_tensor(bias)
    if W.value.ndim != 2 or x.shape[-1] != W.shape[0] or bias.shape != (W.shape[1],):
        raise ShapeError(f"dense: x{x.shape} W{W.shape} b{bias.shape}")
    try:
        act = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return act(add(matmul(x, W), bias))


def add_mlp(store: ParameterStore, prefix: str, sizes: Sequence[int], rng: np.random.Generator) -> None:
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        store.add(f"{prefix}.W{k}", uniform_init(rng, fan_in, (fan_in, fan_out)))
        store.add(f"{prefix}.b{k}", uniform_init(rng, fan_in, (fan_out,)))


def mlp(x, P: Mapping[str, Tensor], prefix: str, depth: int, hidden: str = "relu", out: str = "linear") -> Tensor:
    h = x
    for k in range(depth):
        h = dense(h, P[f"{prefix}.W{k}"], P[f"{prefix}.b{k}"], out if k == depth - 1 else hidden)
    return _guard(h, prefix)


def add_lstm(store: ParameterStore, prefix: str, input_size: int, hidden_size: int, rng: np.random.Generator) -> None:
    fan_in = input_size + hidden_size
    store.add(f"{prefix}.W", uniform_init(rng, fan_in, (fan_in, 4 * hidden_size)))
    store.add(f"{prefix}.b", uniform_init(rng, fan_in, (4 * hidden_size,)))


def lstm_step(x, h, c, P: Mapping[str, Tensor], prefix: str = "lstm") -> tuple[Tensor, Tensor]:
    """One LSTM cell step. Gate column order in the weight matrix: i, f, o, g."""
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    W, b = P[f"{prefix}.W"], P[f"{prefix}.b"]
    H = h.shape[-1]
    if c.shape != h.shape or W.shape != (x.shape[-1] + H, 4 * H):
        raise ShapeError(f"lstm_step: x{x.shape} h{h.shape} c{c.shape} W{W.shape}")
    z = add(matmul(concat([x, h], axis=-1), W), b)
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = tanh(z[..., 3 * H :])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return _guard(h_new, prefix), c_new

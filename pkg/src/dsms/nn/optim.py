from __future__ import annotations

import math

from typing import Mapping

import numpy as np

from ..errors import ShapeError


class ParameterStore:
    """Named parameter arrays plus Adam moments."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for name, value in self.params.items():
            other.params[name] = value.copy()
            other.m[name] = self.m[name].copy()
            other.v[name] = self.v[name].copy()
        other.t = self.t
        return other

    def num_values(self) -> int:
        return sum(v.size for v in self.params.values())

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        """Flat named-tensor view for checkpointing."""
        out = {}
        for name in self.params:
            out[f"{prefix}/param/{name}"] = self.params[name]
            out[f"{prefix}/m/{name}"] = self.m[name]
            out[f"{prefix}/v/{name}"] = self.v[name]
        out[f"{prefix}/t"] = np.array([float(self.t)])
        return out

    def load_state(self, tensors: Mapping[str, np.ndarray], prefix: str) -> None:
        for name in self.params:
            for kind, target in (("param", self.params), ("m", self.m), ("v", self.v)):
                value = np.asarray(tensors[f"{prefix}/{kind}/{name}"], dtype=np.float64)
                if value.shape != target[name].shape:
                    raise ShapeError(f"checkpoint shape mismatch for {name}: {value.shape}")
                target[name] = value.copy()
        self.t = int(tensors[f"{prefix}/t"][0])


def adam_update(
    store: ParameterStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterStore:
    """Adam with bias correction, applied in place. Missing names count as zero gradient."""
    unknown = set(grads) - set(store.params)
    if unknown:
        raise ShapeError(f"gradients for unknown parameters: {sorted(unknown)}")
    for name, g in grads.items():
        if np.shape(g) != store.params[name].shape:
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {store.params[name].shape} for {name}")
    store.t += 1
    c1 = 1.0 - beta1**store.t
    c2 = 1.0 - beta2**store.t
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            g = 0.0
        m = store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale ``grads`` jointly so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    scale = max_norm / total if total > max_norm else 1.0
    return {k: g * scale for k, g in grads.items()}

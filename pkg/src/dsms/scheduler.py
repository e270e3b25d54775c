"""Utility-weighted bandwidth scheduler.

Utilities become simplex weights through a (Gumbel-)softmax; weights become
even per-agent budgets ``b_i = 2 * ceil((B/2 - n) * w_i)``, which never
exceed ``B`` in total and always grant at least 2 units. Every function
accepts plain arrays or :class:`dsms.nn.Tensor` values; tensors stay
differentiable, with the ceiling passing gradients straight through.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InsufficientBandwidthError, InvalidTemperatureError
from .nn import Tensor, ceil_st, mul, softmax

_TINY = np.finfo(np.float64).tiny


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).eps, 1.0, size=shape)
    return -np.log(-np.log(u))


def gumbel_softmax(u, temperature: float = 1.0, noise=None):
    """Softmax of ``(u + noise) / temperature`` over the last axis; ``noise=None`` is the plain tempered softmax."""
    if not temperature > 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {temperature}")
    if isinstance(u, Tensor):
        z = u if noise is None else u + np.asarray(noise, dtype=np.float64)
        return softmax(mul(z, 1.0 / temperature), axis=-1)
    z = np.asarray(u, dtype=np.float64)
    if noise is not None:
        z = z + np.asarray(noise, dtype=np.float64)
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    w = e / e.sum(axis=-1, keepdims=True)
    # keep the strict positivity that the two-unit minimum grant relies on
    return np.maximum(w, _TINY)


def soft_ceil(x):
    """Forward value ceil(x); on tensors the backward pass is the identity."""
    if isinstance(x, Tensor):
        return ceil_st(x)
    if isinstance(x, np.ndarray):
        return np.ceil(x)
    return float(math.ceil(x))


def check_bandwidth(B: int, n: int) -> None:
    if int(B) != B or B % 2:
        raise InsufficientBandwidthError(f"total bandwidth must be an even integer, got {B}")
    if B < 2 * n + 2:
        raise InsufficientBandwidthError(f"bandwidth {B} too small for {n} agents (need >= {2 * n + 2})")


def allocate(w, B: int, n: int | None = None):
    """Per-agent even budgets over the last axis of ``w``.

    Arrays in, integer arrays out. Tensors in, float tensors out whose values
    are the same integers and whose gradient w.r.t. ``w_i`` is ``2 * (B/2 - n)``.
    """
    if n is None:
        n = w.shape[-1]
    check_bandwidth(B, n)
    scale = B / 2 - n
    if isinstance(w, Tensor):
        return mul(soft_ceil(mul(w, scale)), 2.0)
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != n:
        raise ValueError(f"weight vector has {w.shape[-1]} entries, expected {n}")
    if (w <= 0).any() or not np.allclose(w.sum(axis=-1), 1.0, rtol=0, atol=1e-9):
        raise ValueError("weights must be strictly positive and sum to 1")
    return (2 * np.ceil(scale * w)).astype(np.int64)


def fixed_equal_budgets(B: int, n: int, cap: int | None = None) -> np.ndarray:
    """Baseline: every agent gets floor(B/n) rounded down to even (optionally capped)."""
    b = (B // n) // 2 * 2
    if cap is not None:
        b = min(b, cap)
    if b < 2:
        raise InsufficientBandwidthError(f"bandwidth {B} gives agents less than 2 units each")
    return np.full(n, b, dtype=np.int64)


def check_allocation(b: np.ndarray, B: int) -> None:
    """Conservation invariants every round must satisfy."""
    b = np.asarray(b)
    if (b.sum(axis=-1) > B).any() or (b < 2).any() or (b % 2).any():
        raise AssertionError(f"allocation {b.tolist()} violates budget {B}")

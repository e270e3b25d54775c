"""Clipped one-sided DFT message codec.

A length-``p`` real message is mapped to its one-sided spectrum
(``p // 2 + 1`` complex coefficients, lowest frequency first), truncated to
``budget / 2`` coefficients, and reconstructed by zero-padding, Hermitian
mirroring and an inverse DFT. The forward transform is unnormalized; the
inverse carries the ``1/p`` factor. One complex coefficient costs two
bandwidth units.

The transforms are direct ``O(p^2)`` matrix products. The ``*_tensor``
functions are the same linear maps expressed on :class:`dsms.nn.Tensor` so
gradients flow through compression during training.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidBudgetError, InvalidMessageError, MalformedMessageError
from .nn import Tensor, matmul, mul

DEFAULT_MESSAGE_SIZE = 32


def num_coefficients(p: int) -> int:
    return p // 2 + 1


def full_budget(p: int) -> int:
    return 2 * num_coefficients(p)


@dataclass(frozen=True, eq=False)
class RealMessage:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise InvalidMessageError(f"message must be 1-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InvalidMessageError("message contains non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class SpectrumMessage:
    coefficients: np.ndarray
    original_len: int


@dataclass(frozen=True, eq=False)
class ClippedSpectrum:
    coefficients: np.ndarray
    original_len: int
    budget: int = field(init=False)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.complex128)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "budget", 2 * c.shape[0])

    @property
    def k(self) -> int:
        return self.coefficients.shape[0]


@lru_cache(maxsize=None)
def _forward_matrix(p: int) -> np.ndarray:
    """(p, p//2+1) complex matrix with entries exp(-2*pi*i*k*q/p)."""
    K = num_coefficients(p)
    kq = np.outer(np.arange(p), np.arange(K)) % p
    F = np.exp(-2j * np.pi * kq / p)
    F[:, 0] = 1.0
    if p % 2 == 0:
        F[:, p // 2] = np.where(np.arange(p) % 2 == 0, 1.0, -1.0)
    F.setflags(write=False)
    return F


@lru_cache(maxsize=None)
def _inverse_matrix(p: int) -> np.ndarray:
    """(p, p) complex matrix with entries exp(+2*pi*i*k*q/p) / p, rows indexed by k."""
    kq = np.outer(np.arange(p), np.arange(p)) % p
    G = np.exp(2j * np.pi * kq / p) / p
    G.setflags(write=False)
    return G


@lru_cache(maxsize=None)
def real_forward_matrices(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of the one-sided forward DFT as (p, K) real matrices."""
    F = _forward_matrix(p)
    return np.ascontiguousarray(F.real), np.ascontiguousarray(F.imag)


@lru_cache(maxsize=None)
def real_inverse_matrices(p: int) -> tuple[np.ndarray, np.ndarray]:
    """(K, p) matrices mapping (Re X, Im X) of a one-sided spectrum to the real signal.

    Interior bins appear twice in the two-sided spectrum, DC and Nyquist once;
    the imaginary parts of DC and Nyquist do not contribute to the real output.
    """
    K = num_coefficients(p)
    weight = np.full(K, 2.0)
    weight[0] = 1.0
    if p % 2 == 0:
        weight[-1] = 1.0
    kq = np.outer(np.arange(K), np.arange(p)) % p
    ang = 2.0 * np.pi * kq / p
    IC = weight[:, None] * np.cos(ang) / p
    IS = -weight[:, None] * np.sin(ang) / p
    IS[0, :] = 0.0
    if p % 2 == 0:
        IS[-1, :] = 0.0
    return IC, IS


def _as_message(msg) -> RealMessage:
    return msg if isinstance(msg, RealMessage) else RealMessage(np.asarray(msg, dtype=np.float64))


def _check_budget(budget) -> int:
    if isinstance(budget, bool) or int(budget) != budget:
        raise InvalidBudgetError(f"budget must be an integer, got {budget!r}")
    budget = int(budget)
    if budget < 2 or budget % 2:
        raise InvalidBudgetError(f"budget must be an even integer >= 2, got {budget}")
    return budget


def dft_forward(msg) -> SpectrumMessage:
    msg = _as_message(msg)
    p = len(msg)
    if p < 2:
        raise InvalidMessageError(f"message length must be >= 2, got {p}")
    return SpectrumMessage(msg.values @ _forward_matrix(p), p)


def clip_spectrum(spec: SpectrumMessage, budget: int) -> ClippedSpectrum:
    budget = _check_budget(budget)
    k = min(budget // 2, num_coefficients(spec.original_len))
    return ClippedSpectrum(spec.coefficients[:k].copy(), spec.original_len)


def compress(msg, budget: int) -> ClippedSpectrum:
    return clip_spectrum(dft_forward(msg), budget)


def reconstruct(clipped: ClippedSpectrum) -> RealMessage:
    p = clipped.original_len
    K = num_coefficients(p)
    k = clipped.k
    if k < 1 or k > K:
        raise MalformedMessageError(f"{k} coefficients for message length {p} (allowed 1..{K})")
    full = np.zeros(p, dtype=np.complex128)
    full[:k] = clipped.coefficients
    # mirror the positive frequencies onto the negative ones
    for j in range(1, k):
        if p - j != j:
            full[p - j] = np.conj(clipped.coefficients[j])
    out = full @ _inverse_matrix(p)
    return RealMessage(out.real)


def reconstruction_mse(msg, budget: int) -> float:
    """Mean squared reconstruction error, from the energy of the dropped bins (Parseval).

    Exactly zero when no coefficient is dropped.
    """
    msg = _as_message(msg)
    p = len(msg)
    spec = dft_forward(msg).coefficients
    k = min(_check_budget(budget) // 2, num_coefficients(p))
    power = np.abs(spec[k:]) ** 2
    if p % 2 == 0 and k < num_coefficients(p):
        weight = np.full(power.shape, 2.0)
        weight[-1] = 1.0
    else:
        weight = 2.0
    return float(np.sum(weight * power) / (p * p))


def keep_mask(budgets: np.ndarray, p: int) -> np.ndarray:
    """0/1 mask of shape budgets.shape + (K,) keeping the first budget/2 coefficients."""
    budgets = np.asarray(budgets)
    k = np.minimum(budgets // 2, num_coefficients(p))
    return (np.arange(num_coefficients(p)) < k[..., None]).astype(np.float64)


def compress_tensor(x: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """Differentiable forward DFT + clipping. Dropped coefficients get zero gradient."""
    C, S = real_forward_matrices(x.shape[-1])
    return mul(matmul(x, C), mask), mul(matmul(x, S), mask)


def reconstruct_tensor(re: Tensor, im: Tensor, p: int) -> Tensor:
    IC, IS = real_inverse_matrices(p)
    return matmul(re, IC) + matmul(im, IS)

"""Self-checks of the spectral codec against a direct O(p^2) transform."""
from __future__ import annotations

import cmath
from dataclasses import dataclass

import numpy as np

from . import codec


def naive_dft(x) -> list[complex]:
    p = len(x)
    return [sum(x[t] * cmath.exp(-2j * cmath.pi * k * t / p) for t in range(p)) for k in range(p)]


def naive_idft(X) -> list[float]:
    p = len(X)
    return [(sum(X[k] * cmath.exp(2j * cmath.pi * k * t / p) for k in range(p)) / p).real for t in range(p)]


def naive_roundtrip(x, budget: int) -> np.ndarray:
    """Keep the first budget/2 bins, rebuild the rest by conjugate symmetry, invert."""
    p = len(x)
    X = naive_dft(x)
    keep = min(budget // 2, p // 2 + 1)
    full = [0j] * p
    for k in range(keep):
        full[k] = X[k]
        if k:
            full[p - k] = X[k].conjugate()
    return np.array(naive_idft(full))


@dataclass
class CodecCheck:
    sizes: list[int]
    messages: int
    max_spectrum_error: float
    max_roundtrip_error: float
    max_parseval_error: float

    @property
    def ok(self) -> bool:
        return max(self.max_spectrum_error, self.max_roundtrip_error, self.max_parseval_error) <= 1e-6


def run_codec_check(sizes=(4, 8, 16, 32), messages: int = 20, seed: int = 0) -> CodecCheck:
    rng = np.random.default_rng(seed)
    spec_err = rt_err = mse_err = 0.0
    for p in sizes:
        K = codec.num_coefficients(p)
        for _ in range(messages):
            x = rng.normal(size=p)
            msg = codec.RealMessage(x)
            X = naive_dft(list(x))
            got = codec.dft_forward(msg).coefficients
            spec_err = max(spec_err, float(np.max(np.abs(got - np.array(X[:K])))))
            budget = 2 * int(rng.integers(1, K + 1))
            want = naive_roundtrip(list(x), budget)
            rec = codec.reconstruct(codec.compress(msg, budget)).values
            rt_err = max(rt_err, float(np.max(np.abs(rec - want))))
            mse_err = max(mse_err, abs(codec.reconstruction_mse(msg, budget) - float(np.mean((x - want) ** 2))))
    return CodecCheck(list(sizes), messages, spec_err, rt_err, mse_err)

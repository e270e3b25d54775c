"""Independent reference implementations used only by the tests."""
import math

import numpy as np


def _twiddles(p, sign):
    # reduce k*q mod p in exact integer arithmetic before taking the angle
    kq = np.outer(np.arange(p), np.arange(p)) % p
    return np.exp(sign * 2j * np.pi * kq / p)


def direct_dft(x):
    """X[k] = sum_q x[q] exp(-2 pi i k q / p), every k, by explicit summation."""
    x = np.asarray(x, dtype=complex)
    return (_twiddles(len(x), -1) * x[None, :]).sum(axis=1)


def direct_idft(X):
    X = np.asarray(X, dtype=complex)
    return (_twiddles(len(X), 1) * X[None, :]).sum(axis=1) / len(X)


def two_sided(one_sided, p):
    """Zero-pad a clipped one-sided spectrum and fill the negative bins by conjugation."""
    full = np.zeros(p, dtype=complex)
    for k, c in enumerate(one_sided):
        full[k] = c
        if k:
            full[p - k] = np.conj(c)
    return full


def rel_err(got, want):
    got, want = np.asarray(got), np.asarray(want)
    return float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300))


def budgets_by_hand(w, B):
    n = len(w)
    return [2 * math.ceil((B / 2 - n) * wi) for wi in w]


def central_diff(f, x, h=1e-5):
    """Gradient of scalar f at array x by central differences (x is perturbed in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def grad_rel_err(analytic, numeric):
    a, b = np.ravel(analytic), np.ravel(numeric)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))

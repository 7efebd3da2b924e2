"""Small dense numeric kernel used by the encoder and its gradient checks.

Everything operates on float64 numpy arrays and never mutates its inputs.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 stream; identical across platforms for a given seed."""
    return np.random.Generator(np.random.PCG64(seed))


def _vec(v) -> np.ndarray:
    return np.asarray(v, dtype=DTYPE)


def sigmoid(v) -> np.ndarray:
    v = _vec(v)
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def tanh(v) -> np.ndarray:
    return np.tanh(_vec(v))


def hadamard(a, b) -> np.ndarray:
    a, b = _vec(a), _vec(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: {a.shape} vs {b.shape}")
    return a * b


def matvec(m, v) -> np.ndarray:
    m, v = _vec(m), _vec(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: {m.shape} x {v.shape}")
    return m @ v


def outer(u, v) -> np.ndarray:
    u, v = _vec(u), _vec(v)
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"outer expects vectors, got {u.shape}, {v.shape}")
    return np.outer(u, v)


def tensor_dot(t, a) -> np.ndarray:
    """Sum over the last axis of matvec(t[:, :, k], a[:, k]).

    ``t`` has shape (rows, l, d) and ``a`` shape (l, d); the result has
    ``rows`` entries.
    """
    t, a = _vec(t), _vec(a)
    if t.ndim != 3 or a.ndim != 2 or t.shape[1:] != a.shape:
        raise ShapeError(f"tensor_dot: {t.shape} x {a.shape}")
    return t.reshape(t.shape[0], -1) @ a.reshape(-1)


def init_uniform(shape: int | Sequence[int], lo: float, hi: float,
                 rng: np.random.Generator) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"invalid range [{lo}, {hi})")
    out = rng.uniform(lo, hi, size=shape).astype(DTYPE, copy=False)
    # uniform() can round up to hi for very narrow ranges
    return np.where(out >= hi, np.nextafter(hi, lo), out)


def finite_diff_grad(f: Callable[[np.ndarray], float], theta,
                     eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``theta``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = _vec(theta)
    grad = np.zeros_like(theta)
    flat = grad.reshape(-1)
    for k in range(theta.size):
        plus = theta.copy()
        minus = theta.copy()
        plus.reshape(-1)[k] += eps
        minus.reshape(-1)[k] -= eps
        fp, fm = f(plus), f(minus)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective at coordinate {k}")
        flat[k] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a, n = _vec(analytic), _vec(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)

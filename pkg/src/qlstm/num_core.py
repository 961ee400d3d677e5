"""Dense float64 kernels: affine maps, elementwise products, activations.

Everything operates on plain numpy float64 arrays. Matrices are row-major
(rows, cols); vectors are 1-d. All functions are pure and thread-safe.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """W @ x + b with explicit shape checking."""
    W, x, b = _as_f64(W), _as_f64(x), _as_f64(b)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeMismatchError(
            f"affine expects (matrix, vector, vector); got shapes "
            f"{W.shape}, {x.shape}, {b.shape}"
        )
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ShapeMismatchError(
            f"affine shape mismatch: W is {W.shape}, x is {x.shape}, b is {b.shape}"
        )
    return W @ x + b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equal-length vectors."""
    a, b = _as_f64(a), _as_f64(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def sigmoid(v):
    """Numerically stable logistic function.

    Uses the two-branch form so exp() never overflows for large |v|.
    """
    v = _as_f64(v)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def tanh(v):
    return np.tanh(_as_f64(v))


def softmax(v: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over a 1-d vector (or last axis of a 2-d array)."""
    v = _as_f64(v)
    shifted = v - np.max(v, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def logsumexp(v: np.ndarray, axis=None) -> np.ndarray:
    """Max-shifted log(sum(exp(v)))."""
    v = _as_f64(v)
    m = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)

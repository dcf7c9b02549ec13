"""Dense float64 kernels used throughout the compression engine.

Matrices are 2-D C-contiguous float64 ndarrays, vectors are 1-D float64.
``as_matrix`` / ``as_vector`` are the validation chokepoints: public
operations route their inputs through them, so everything downstream can
assume finite float64 data of the right rank.

All functions here are pure and thread-safe.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

# Below this norm a vector is treated as directionless in cosine space.
DEGENERATE_NORM = 1e-12


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a finite, non-empty 2-D float64 array."""
    a = np.ascontiguousarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must be non-empty, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NumericError(f"{name} contains non-finite entries")
    return a


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Validate and convert to a finite, non-empty 1-D float64 array."""
    a = np.ascontiguousarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ShapeError(f"{name} must be non-empty")
    if not np.isfinite(a).all():
        raise NumericError(f"{name} contains non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product of two 2-D arrays."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"inner dimensions differ: {a.shape} x {b.shape}"
        )
    return a @ b


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability."""
    a = as_matrix(m, "softmax input")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def mean_rows(m) -> np.ndarray:
    """Component-wise arithmetic mean of the rows of a matrix."""
    a = as_matrix(m, "mean input")
    return a.mean(axis=0)


def cosine_distance(u, v) -> float:
    """1 - cos(u, v), with a neutral value of 1.0 for near-zero operands.

    A vector of norm below ``DEGENERATE_NORM`` carries no usable direction,
    so the distance is pinned to the midpoint of the [0, 2] range instead
    of propagating a NaN.
    """
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape[0] != v.shape[0]:
        raise ShapeError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < DEGENERATE_NORM or nv < DEGENERATE_NORM:
        return 1.0
    return 1.0 - float(np.dot(u, v)) / (nu * nv)


def topk_indices(scores, k: int) -> np.ndarray:
    """Indices of the k highest scores, ascending by original position.

    Ties break toward the smaller original index, so the selection is
    deterministic and the returned order preserves the input layout.
    """
    s = as_vector(scores, "scores")
    n = s.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} outside [1, {n}]")
    # Stable sort on negated scores keeps ascending index order within ties.
    order = np.argsort(-s, kind="stable")
    kept = np.sort(order[:k])
    return kept.astype(np.int64)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], params, h: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Evaluates (f(x + h*e_i) - f(x - h*e_i)) / (2h) for every coordinate.
    """
    x = as_vector(params, "params")
    if not h > 0:
        raise ParameterError(f"step size must be positive, got {h}")
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"function evaluation non-finite at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad

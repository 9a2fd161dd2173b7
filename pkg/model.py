"""
Model scaffolding: ReLU feature map, scalar prediction head and squared loss.

Everything here is a pure float64 function of its inputs.
"""

from __future__ import annotations

import numpy as np

try:  # pragma: no cover - support both package and script execution
    from .core.errors import ShapeMismatch
    from .core.models import as_matrix, as_vector
except ImportError:  # pragma: no cover - script mode fallback
    from core.errors import ShapeMismatch  # type: ignore
    from core.models import as_matrix, as_vector  # type: ignore


def relu(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, 0.0)


def relu_derivative(values: np.ndarray) -> np.ndarray:
    """0/1 mask of sigma'(values); sigma'(0) is taken to be 0."""
    return (np.asarray(values) > 0.0).astype(np.float64)


def feature_map(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Phi = max(0, X W)."""
    X = as_matrix(X, "X")
    W = as_matrix(W, "W")
    if X.shape[1] != W.shape[0]:
        raise ShapeMismatch(f"X is {X.shape} but W is {W.shape}; inner dimensions differ")
    return relu(X @ W)


def predict(Z: np.ndarray, b: np.ndarray) -> np.ndarray:
    Z = as_matrix(Z, "Z")
    b = as_vector(b, "b")
    if Z.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"Z has {Z.shape[1]} columns but b has length {b.shape[0]}")
    return Z @ b


def loss(yhat: np.ndarray, y: np.ndarray) -> float:
    """Half squared Euclidean distance between predictions and targets."""
    yhat = as_vector(yhat, "yhat")
    y = as_vector(y, "y")
    if yhat.shape != y.shape:
        raise ShapeMismatch(f"yhat has length {yhat.shape[0]} but y has length {y.shape[0]}")
    diff = yhat - y
    return 0.5 * float(diff @ diff)

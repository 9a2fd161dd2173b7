"""Column-major vectorisation and the dense Kronecker pieces of the adjoint system.

vec stacks columns, so for U of shape N x m ``vec(U)[j * N + i] == U[i, j]``
and the identities used across the package read

    (A^T kron I_N) vec(U) = vec(U A)
    (A kron I_N)   vec(U) = vec(U A^T)
    diag(vec(M))   vec(U) = vec(M * U)

Everything here materialises Nm x Nm matrices and is meant for desk-scale
oracles only.
"""

from __future__ import annotations

import numpy as np

from .errors import TooLarge

DESK_SCALE_LIMIT = 4096


def vec(matrix: np.ndarray) -> np.ndarray:
    return np.asarray(matrix).reshape(-1, order="F")


def unvec(vector: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(vector).reshape((rows, cols), order="F")


def mask_diag(mask: np.ndarray) -> np.ndarray:
    return np.diag(vec(mask).astype(np.float64))


def ensure_desk_scale(N: int, m: int, limit: int = DESK_SCALE_LIMIT) -> None:
    if N * m > limit:
        raise TooLarge(f"dense assembly needs N*m <= {limit}, got N={N}, m={m} ({N * m})")


def dense_q(D_mask: np.ndarray, A: np.ndarray, gamma: float) -> np.ndarray:
    """Q = I_{Nm} - gamma * D (A^T kron I_N)."""
    N, m = D_mask.shape
    ensure_desk_scale(N, m)
    kron = np.kron(A.T, np.eye(N))
    return np.eye(N * m) - gamma * mask_diag(D_mask) @ kron


def output_map(b: np.ndarray, N: int) -> np.ndarray:
    """(b^T kron I_N), the N x Nm map with yhat = (b^T kron I_N) vec(Z)."""
    return np.kron(np.asarray(b, dtype=np.float64).reshape(1, -1), np.eye(N))

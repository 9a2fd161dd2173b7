"""
Spectral estimators and the prediction-dynamics Gram diagnostic.

``operator_norm`` is a seeded power iteration on M^T M, used for the
per-epoch ||A(k)|| monitors. ``smallest_singular_value`` is an exact dense
SVD. ``gram_matrix`` assembles H = Z Z^T + M M^T + Pi Pi^T at desk scale.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg

try:  # pragma: no cover - support both package and script execution
    from .core.errors import NonContractive, ShapeError, ShapeMismatch
    from .core.linalg import dense_q, ensure_desk_scale, unvec, vec
    from .core.models import EquilibriumState, GramDiagnostics, Params, as_matrix
except ImportError:  # pragma: no cover - script mode fallback
    from core.errors import NonContractive, ShapeError, ShapeMismatch  # type: ignore
    from core.linalg import dense_q, ensure_desk_scale, unvec, vec  # type: ignore
    from core.models import EquilibriumState, GramDiagnostics, Params, as_matrix  # type: ignore

LOGGER = logging.getLogger(__name__)


def operator_norm(M: np.ndarray, tol: float = 1e-10, seed: int = 0) -> float:
    """
    Largest singular value of M by power iteration on M^T M.

    The start vector comes from ``default_rng(seed)`` so repeated calls are
    bitwise identical. After 10 * max(M.shape) sweeps without meeting the
    relative tolerance the dense SVD answer is returned instead.
    """
    M = as_matrix(M, "M")
    if M.size == 0:
        raise ShapeMismatch("operator_norm needs a nonempty matrix")
    if not np.any(M):
        return 0.0

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    cap = 10 * max(M.shape)
    for _ in range(cap):
        u = M @ v
        current = float(np.linalg.norm(u))
        w = M.T @ u
        w_norm = float(np.linalg.norm(w))
        if w_norm == 0.0:
            # start vector fell in the null space; rotate away from it
            v = rng.standard_normal(M.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / w_norm
        if abs(current - estimate) <= tol * current:
            return current
        estimate = current

    LOGGER.debug("Power iteration hit %s sweeps on a %s matrix; using dense SVD", cap, M.shape)
    return float(linalg.svdvals(M)[0])


def smallest_singular_value(M: np.ndarray) -> float:
    """sigma_N(M) for an N x m matrix with N <= m."""
    M = as_matrix(M, "M")
    rows, cols = M.shape
    if rows > cols:
        raise ShapeError(f"smallest_singular_value needs rows <= cols, got {rows}x{cols}")
    return float(linalg.svdvals(M)[-1])


def _min_eig(matrix: np.ndarray) -> float:
    return float(linalg.eigvalsh(matrix, subset_by_index=[0, 0])[0])


def gram_matrix(
    state: EquilibriumState,
    params: Params,
    X: np.ndarray,
    seed: int = 0,
) -> GramDiagnostics:
    """Dense H(t) = Z Z^T + M M^T + Pi Pi^T at the given equilibrium."""
    Z = as_matrix(state.Z, "Z")
    X = as_matrix(X, "X")
    N, m = Z.shape
    ensure_desk_scale(N, m)
    if X.shape[0] != N:
        raise ShapeMismatch(f"X has {X.shape[0]} rows but Z has {N}")

    gamma_norm = params.gamma * operator_norm(params.A, seed=seed)
    if gamma_norm >= 1.0:
        raise NonContractive(f"gamma*||A|| = {gamma_norm:.6g} >= 1", gamma_norm=gamma_norm)

    # Row k of G = (b^T kron I_N) Q^{-1} solves Q^T g = vec(e_k b^T).
    Q = dense_q(state.D_mask, params.A, params.gamma)
    rhs = np.stack(
        [vec(np.outer(np.eye(N)[k], params.b)) for k in range(N)],
        axis=1,
    )
    G_T = linalg.lu_solve(linalg.lu_factor(Q.T), rhs)

    M_rows = np.empty((N, m * m))
    Pi_rows = np.empty((N, X.shape[1] * m))
    for k in range(N):
        U = state.D_mask * unvec(G_T[:, k], N, m)
        M_rows[k] = params.gamma * vec(Z.T @ U)
        Pi_rows[k] = vec(X.T @ (state.E_mask * U))

    ZZ = Z @ Z.T
    MM = M_rows @ M_rows.T
    PP = Pi_rows @ Pi_rows.T
    H = ZZ + MM + PP
    H = 0.5 * (H + H.T)

    sigma_min_Z = smallest_singular_value(Z) if N <= m else 0.0
    components = {"ZZT": _min_eig(ZZ), "MMT": _min_eig(MM), "PiPiT": _min_eig(PP)}
    return GramDiagnostics(
        H=H,
        lambda_min_H=_min_eig(H),
        sigma_min_Z=float(sigma_min_Z),
        components=components,
    )

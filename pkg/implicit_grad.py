"""
Implicit-function-theorem gradients of the squared loss.

With r = yhat - y and masks D, E frozen at the equilibrium, the adjoint
V = unvec(Q^{-T} vec(r b^T)) satisfies the fixed point

    V = r b^T + gamma (D * V) A^T

and the parameter gradients follow without ever forming Q:

    db = Z^T r,   dA = gamma Z^T (D * V),   dW = X^T (E * D * V).
"""

from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np
from scipy import linalg

try:  # pragma: no cover - support both package and script execution
    from .core.errors import ContractViolation, NotConverged, ShapeMismatch, UnconvergedAdjoint
    from .core.linalg import dense_q, unvec, vec
    from .core.models import (
        AdjointState,
        Dataset,
        EquilibriumState,
        Evaluation,
        Gradients,
        Params,
        SolveOptions,
        SolveTelemetry,
        as_matrix,
        as_vector,
    )
    from .equilibrium import ensure_contractive, solve_forward
    from .model import feature_map, loss, predict
except ImportError:  # pragma: no cover - script mode fallback
    from core.errors import ContractViolation, NotConverged, ShapeMismatch, UnconvergedAdjoint  # type: ignore
    from core.linalg import dense_q, unvec, vec  # type: ignore
    from core.models import (  # type: ignore
        AdjointState,
        Dataset,
        EquilibriumState,
        Evaluation,
        Gradients,
        Params,
        SolveOptions,
        SolveTelemetry,
        as_matrix,
        as_vector,
    )
    from equilibrium import ensure_contractive, solve_forward  # type: ignore
    from model import feature_map, loss, predict  # type: ignore

LOGGER = logging.getLogger(__name__)

ADJOINT_METHODS = ("picard", "dense")


def solve_adjoint(
    state: EquilibriumState,
    params: Params,
    r: np.ndarray,
    opts: Optional[SolveOptions] = None,
    method: str = "picard",
    raise_unconverged: bool = False,
) -> AdjointState:
    """
    Solve Q^T vec(V) = vec(r b^T).

    ``picard`` iterates V <- r b^T + gamma (D * V) A^T; the first sweep from
    V = 0 is folded in, so A = 0 converges after one counted iteration.
    ``dense`` assembles Q and is limited to desk scale.
    """
    if method not in ADJOINT_METHODS:
        raise ContractViolation(f"method must be one of {ADJOINT_METHODS}, got {method!r}")
    opts = opts or SolveOptions.precise()
    r = as_vector(r, "r")
    N, m = state.Z.shape
    if r.shape[0] != N:
        raise ShapeMismatch(f"r has length {r.shape[0]} but the equilibrium has {N} rows")
    A = as_matrix(params.A, "A")
    if A.shape != (m, m):
        raise ShapeMismatch(f"A is {A.shape}, expected {(m, m)}")
    if opts.check_contraction:
        ensure_contractive(A, params.gamma, context="adjoint solve")

    rhs = np.outer(r, params.b)
    threshold = opts.threshold(float(np.linalg.norm(rhs)))
    gamma_AT = params.gamma * A.T
    D = state.D_mask

    if method == "dense":
        Q = dense_q(D, A, params.gamma)
        V = unvec(linalg.solve(Q.T, vec(rhs)), N, m)
        residual = float(np.linalg.norm(V - (rhs + (D * V) @ gamma_AT)))
        return AdjointState(
            V=V,
            iterations=0,
            residual=residual,
            converged=residual <= threshold,
            tolerance=threshold,
            residual_trace=[residual],
        )

    V = rhs.copy()
    trace: List[float] = []
    converged = False
    iterations = 0
    residual = float("inf")
    for iterations in range(1, opts.max_iter + 1):
        V_next = rhs + (D * V) @ gamma_AT
        residual = float(np.linalg.norm(V_next - V))
        trace.append(residual)
        V = V_next
        if residual <= threshold:
            converged = True
            break
        if not np.isfinite(residual):
            break

    adjoint = AdjointState(
        V=V,
        iterations=iterations,
        residual=residual,
        converged=converged,
        tolerance=threshold,
        residual_trace=trace,
    )
    LOGGER.debug("Adjoint solve: %s iterations, residual %.3e", iterations, residual)
    if not converged:
        message = (
            f"adjoint solve stopped after {iterations} iterations with residual "
            f"{residual:.3e} > {threshold:.3e}"
        )
        if raise_unconverged:
            raise NotConverged(message, state=adjoint)
        LOGGER.warning("%s", message)
    return adjoint


def gradients(
    state: EquilibriumState,
    adj: AdjointState,
    params: Params,
    X: np.ndarray,
    r: np.ndarray,
    allow_unconverged: bool = False,
) -> Gradients:
    if not adj.converged and not allow_unconverged:
        raise UnconvergedAdjoint(
            f"adjoint residual {adj.residual:.3e} above {adj.tolerance:.3e}; gradients would be inexact",
            state=adj,
        )
    X = as_matrix(X, "X")
    r = as_vector(r, "r")
    Z = state.Z
    N, m = Z.shape
    if X.shape[0] != N or r.shape[0] != N:
        raise ShapeMismatch(f"X has {X.shape[0]} rows and r has length {r.shape[0]}; expected {N}")
    if adj.V.shape != (N, m):
        raise ShapeMismatch(f"adjoint V is {adj.V.shape}, expected {(N, m)}")
    if X.shape[1] != params.d:
        raise ShapeMismatch(f"X has {X.shape[1]} columns but W has {params.d} rows")

    U = state.D_mask * adj.V
    return Gradients(
        dW=X.T @ (state.E_mask * U),
        dA=params.gamma * (Z.T @ U),
        db=Z.T @ r,
    )


def loss_and_gradients(
    params: Params,
    data: Dataset,
    opts: Optional[SolveOptions] = None,
    adjoint_opts: Optional[SolveOptions] = None,
    Z0: Optional[np.ndarray] = None,
    allow_unconverged: bool = False,
) -> Evaluation:
    """
    Feature map, forward solve, prediction, loss, adjoint solve and gradients
    in one call. Adjoint options default to the forward ones.

    Unless ``allow_unconverged`` is set, a forward solve that stops short
    raises NotConverged and an adjoint that stops short raises
    UnconvergedAdjoint.
    """
    opts = opts or SolveOptions.precise()
    adjoint_opts = adjoint_opts or opts
    Phi = feature_map(data.X, params.W)
    state = solve_forward(params, Phi, opts, Z0=Z0, raise_unconverged=not allow_unconverged)
    yhat = predict(state.Z, params.b)
    value = loss(yhat, data.y)
    r = yhat - data.y
    adj = solve_adjoint(state, params, r, adjoint_opts)
    grads = gradients(state, adj, params, data.X, r, allow_unconverged=allow_unconverged)
    telemetry = SolveTelemetry(
        forward_iterations=state.iterations,
        adjoint_iterations=adj.iterations,
        forward_residual=state.residual,
        adjoint_residual=adj.residual,
        forward_converged=state.converged,
        adjoint_converged=adj.converged,
    )
    return Evaluation(
        loss=value,
        grads=grads,
        state=state,
        adjoint=adj,
        telemetry=telemetry,
        yhat=yhat,
        residual=r,
    )

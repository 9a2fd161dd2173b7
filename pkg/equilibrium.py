"""
Forward pass of the implicit layer: Z = max(0, gamma Z A + Phi).

The Picard solver starts from Z = 0 (or a warm start when asked for) and
stops on the Frobenius distance between successive iterates. Nonnegative A
also admits the closed form Z = Phi (I - gamma A)^{-1}, used as an oracle.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

try:  # pragma: no cover - support both package and script execution
    from .core.errors import (
        ContractViolation,
        NegativeEntries,
        NonContractive,
        NotConverged,
        ShapeMismatch,
        SingularSystem,
    )
    from .core.models import EquilibriumState, Params, SolveOptions, as_matrix
    from .model import feature_map, relu, relu_derivative
    from .spectral import operator_norm
except ImportError:  # pragma: no cover - script mode fallback
    from core.errors import (  # type: ignore
        ContractViolation,
        NegativeEntries,
        NonContractive,
        NotConverged,
        ShapeMismatch,
        SingularSystem,
    )
    from core.models import EquilibriumState, Params, SolveOptions, as_matrix  # type: ignore
    from model import feature_map, relu, relu_derivative  # type: ignore
    from spectral import operator_norm  # type: ignore

LOGGER = logging.getLogger(__name__)

RATIO_FLOOR = 1e-300


def ensure_contractive(A: np.ndarray, gamma: float, context: str = "forward solve") -> float:
    """Return gamma * ||A||, raising NonContractive when it is not below 1."""
    gamma_norm = float(gamma) * operator_norm(A)
    if gamma_norm >= 1.0:
        raise NonContractive(
            f"{context}: gamma*||A|| = {gamma_norm:.6g} >= 1, fixed-point map is not a contraction",
            gamma_norm=gamma_norm,
        )
    return gamma_norm


def solve_forward(
    params: Params,
    Phi: np.ndarray,
    opts: Optional[SolveOptions] = None,
    Z0: Optional[np.ndarray] = None,
    raise_unconverged: bool = False,
) -> EquilibriumState:
    """
    Picard iteration Z <- max(0, gamma Z A + Phi).

    A state that hits ``max_iter`` is returned with ``converged=False``;
    pass ``raise_unconverged=True`` to get NotConverged (carrying that state)
    instead. ``Z0`` is only used when ``opts.warm_start`` is set.
    """
    opts = opts or SolveOptions.precise()
    Phi = as_matrix(Phi, "Phi")
    A = as_matrix(params.A, "A")
    if Phi.shape[1] != A.shape[0]:
        raise ShapeMismatch(f"Phi has {Phi.shape[1]} columns but A is {A.shape}")
    if opts.check_contraction:
        ensure_contractive(A, params.gamma)

    gamma_A = params.gamma * A
    threshold = opts.threshold(float(np.linalg.norm(Phi)))
    if opts.warm_start and Z0 is not None:
        Z = np.array(Z0, dtype=np.float64, copy=True)
        if Z.shape != Phi.shape:
            raise ShapeMismatch(f"warm start has shape {Z.shape}, expected {Phi.shape}")
    else:
        Z = np.zeros_like(Phi)

    trace: List[float] = []
    converged = False
    iterations = 0
    residual = float("inf")
    for iterations in range(1, opts.max_iter + 1):
        Z_next = relu(Z @ gamma_A + Phi)
        residual = float(np.linalg.norm(Z_next - Z))
        trace.append(residual)
        Z = Z_next
        if residual <= threshold:
            converged = True
            break
        if not np.isfinite(residual):
            break

    state = EquilibriumState(
        Z=Z,
        D_mask=relu_derivative(Z @ gamma_A + Phi),
        E_mask=relu_derivative(Phi),
        iterations=iterations,
        residual=residual,
        converged=converged,
        tolerance=threshold,
        residual_trace=trace,
    )
    LOGGER.debug("Forward solve: %s iterations, residual %.3e", iterations, residual)
    if not converged:
        message = (
            f"forward solve stopped after {iterations} iterations with residual "
            f"{residual:.3e} > {threshold:.3e}"
        )
        if raise_unconverged:
            raise NotConverged(message, state=state)
        LOGGER.warning("%s", message)
    return state


def equilibrium_for(
    params: Params,
    X: np.ndarray,
    opts: Optional[SolveOptions] = None,
    raise_unconverged: bool = False,
) -> EquilibriumState:
    """Feature map followed by the forward solve."""
    return solve_forward(params, feature_map(X, params.W), opts, raise_unconverged=raise_unconverged)


def closed_form_equilibrium(Phi: np.ndarray, A: np.ndarray, gamma: float) -> np.ndarray:
    """Z = Phi (I - gamma A)^{-1} for entrywise nonnegative A, by LU solve."""
    Phi = as_matrix(Phi, "Phi")
    A = as_matrix(A, "A")
    m = A.shape[0]
    if A.shape != (m, m) or Phi.shape[1] != m:
        raise ShapeMismatch(f"Phi is {Phi.shape} and A is {A.shape}")
    if np.any(A < 0):
        raise NegativeEntries(f"closed form needs A >= 0 entrywise; min entry {A.min():.3e}")
    ensure_contractive(A, gamma, context="closed form")

    # Z (I - gamma A) = Phi  <=>  (I - gamma A)^T Z^T = Phi^T
    system = (np.eye(m) - gamma * A).T
    try:
        lu, piv = linalg.lu_factor(system, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"LU factorisation failed: {exc}") from exc
    if np.any(np.diag(lu) == 0.0):
        raise SingularSystem("I - gamma A is singular")
    Z = linalg.lu_solve((lu, piv), Phi.T).T
    # roundoff can leave -1e-17 entries
    return np.maximum(Z, 0.0)


def contraction_diagnostics(residual_trace: Sequence[float]) -> List[float]:
    """Consecutive residual ratios r_l = res_{l+1} / res_l."""
    trace = [float(value) for value in residual_trace]
    if len(trace) < 2:
        raise ContractViolation(f"need at least two residuals, got {len(trace)}")
    return [
        (current / previous) if previous >= RATIO_FLOOR else 0.0
        for previous, current in zip(trace[:-1], trace[1:])
    ]


def lemma4_gap(
    Wa: np.ndarray,
    Aa: np.ndarray,
    Wb: np.ndarray,
    Ab: np.ndarray,
    X: np.ndarray,
    gamma: float,
    opts: Optional[SolveOptions] = None,
) -> Dict[str, float]:
    """
    Distance between the equilibria of (Wa, Aa) and (Wb, Ab) against its
    a-priori bound

        ||X||_F / (1 - g0) * [ g0 / (1 - g0) * l1 / l2 * ||Aa - Ab|| + ||Wa - Wb|| ]

    with l1 = max ||W||, l2 = max ||A||, g0 = gamma * l2.
    ``tolerance`` is the combined solver threshold of the two forward solves.
    """
    opts = opts or SolveOptions.precise()
    X = as_matrix(X, "X")
    lambda1 = max(operator_norm(Wa), operator_norm(Wb))
    lambda2 = max(operator_norm(Aa), operator_norm(Ab))
    gamma0 = float(gamma) * lambda2
    if gamma0 >= 1.0:
        raise NonContractive(f"gamma*max(||Aa||, ||Ab||) = {gamma0:.6g} >= 1", gamma_norm=gamma0)

    state_a = solve_forward(Params(W=Wa, A=Aa, b=np.zeros(Aa.shape[0]), gamma=gamma), feature_map(X, Wa), opts)
    state_b = solve_forward(Params(W=Wb, A=Ab, b=np.zeros(Ab.shape[0]), gamma=gamma), feature_map(X, Wb), opts)
    actual = float(np.linalg.norm(state_a.Z - state_b.Z))

    a_term = 0.0
    if lambda2 > 0.0:
        a_term = gamma0 / (1.0 - gamma0) * (lambda1 / lambda2) * operator_norm(np.asarray(Aa) - np.asarray(Ab))
    w_term = operator_norm(np.asarray(Wa) - np.asarray(Wb))
    bound = float(np.linalg.norm(X)) / (1.0 - gamma0) * (a_term + w_term)
    return {
        "bound": bound,
        "actual": actual,
        "tolerance": state_a.tolerance + state_b.tolerance,
        "gamma0": gamma0,
    }

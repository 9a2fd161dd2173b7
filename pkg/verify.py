"""
Independent gradient oracles for desk-scale instances.

* central finite differences of the whole pipeline,
* the dense Kronecker-form gradient formulas with an explicit Q,
* reverse accumulation through a fixed number of unrolled Picard steps.

None of these is used by the trainer.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

try:  # pragma: no cover - support both package and script execution
    from .core.errors import ContractViolation, KinkProximity
    from .core.linalg import dense_q, ensure_desk_scale, mask_diag, output_map, unvec
    from .core.models import (
        Dataset,
        FdOptions,
        GradCheckReport,
        Gradients,
        Params,
        SolveOptions,
    )
    from .data import normalize_rows
    from .equilibrium import ensure_contractive, solve_forward
    from .implicit_grad import loss_and_gradients
    from .model import feature_map, loss, predict, relu, relu_derivative
    from .spectral import operator_norm
except ImportError:  # pragma: no cover - script mode fallback
    from core.errors import ContractViolation, KinkProximity  # type: ignore
    from core.linalg import dense_q, ensure_desk_scale, mask_diag, output_map, unvec  # type: ignore
    from core.models import (  # type: ignore
        Dataset,
        FdOptions,
        GradCheckReport,
        Gradients,
        Params,
        SolveOptions,
    )
    from data import normalize_rows  # type: ignore
    from equilibrium import ensure_contractive, solve_forward  # type: ignore
    from implicit_grad import loss_and_gradients  # type: ignore
    from model import feature_map, loss, predict, relu, relu_derivative  # type: ignore
    from spectral import operator_norm  # type: ignore

LOGGER = logging.getLogger(__name__)

MAX_RESAMPLES = 1000
BLOCKS = ("dW", "dA", "db")


def _pipeline_loss(params: Params, data: Dataset, solve_opts: SolveOptions) -> float:
    state = solve_forward(params, feature_map(data.X, params.W), solve_opts, raise_unconverged=True)
    return loss(predict(state.Z, params.b), data.y)


def kink_distance(params: Params, data: Dataset, solve_opts: Optional[SolveOptions] = None) -> float:
    """Smallest |pre-activation| over gamma Z A + Phi and X W."""
    solve_opts = solve_opts or SolveOptions.precise()
    XW = data.X @ params.W
    Phi = relu(XW)
    state = solve_forward(params, Phi, solve_opts)
    inner = params.gamma * state.Z @ params.A + Phi
    return float(min(np.min(np.abs(inner)), np.min(np.abs(XW))))


def finite_diff_gradients(
    params: Params,
    data: Dataset,
    opts: Optional[FdOptions] = None,
    solve_opts: Optional[SolveOptions] = None,
) -> Gradients:
    """Central differences over every coordinate of W, A and b."""
    opts = opts or FdOptions()
    solve_opts = solve_opts or SolveOptions.tight()
    distance = kink_distance(params, data, solve_opts)
    if distance <= opts.kink_margin:
        raise KinkProximity(
            f"a pre-activation is {distance:.3e} from zero (margin {opts.kink_margin:.1e}); resample the instance"
        )

    h = opts.step
    blocks: Dict[str, np.ndarray] = {}
    for name in ("W", "A", "b"):
        base = getattr(params, name)
        grad = np.zeros_like(base)
        for index in np.ndindex(base.shape):
            plus = params.copy()
            minus = params.copy()
            getattr(plus, name)[index] += h
            getattr(minus, name)[index] -= h
            grad[index] = (_pipeline_loss(plus, data, solve_opts) - _pipeline_loss(minus, data, solve_opts)) / (2.0 * h)
        blocks[name] = grad
    return Gradients(dW=blocks["W"], dA=blocks["A"], db=blocks["b"])


def dense_lemma2_gradients(
    params: Params,
    data: Dataset,
    solve_opts: Optional[SolveOptions] = None,
) -> Gradients:
    """
    Assemble D, E and Q = I - gamma D (A^T kron I_N) explicitly and evaluate

        dW = [D E (I_m kron X)]^T Q^{-T} (b^T kron I_N)^T r
        dA = gamma [D (I_m kron Z)]^T Q^{-T} (b^T kron I_N)^T r
        db = Z^T r
    """
    solve_opts = solve_opts or SolveOptions.tight()
    N, d = data.X.shape
    m = params.m
    ensure_desk_scale(N, m)

    state = solve_forward(params, feature_map(data.X, params.W), solve_opts, raise_unconverged=True)
    Z = state.Z
    r = predict(Z, params.b) - data.y

    D = mask_diag(state.D_mask)
    E = mask_diag(state.E_mask)
    Q = dense_q(state.D_mask, params.A, params.gamma)
    v = linalg.solve(Q.T, output_map(params.b, N).T @ r)

    I_m = np.eye(m)
    dW = (D @ E @ np.kron(I_m, data.X)).T @ v
    dA = params.gamma * (D @ np.kron(I_m, Z)).T @ v
    return Gradients(dW=unvec(dW, d, m), dA=unvec(dA, m, m), db=Z.T @ r)


def unrolled_gradients(
    params: Params,
    data: Dataset,
    unroll_steps: int,
) -> Gradients:
    """Reverse accumulation through Z_0 = 0, Z_l = relu(gamma Z_{l-1} A + Phi), l = 1..unroll_steps."""
    if unroll_steps < 1:
        raise ContractViolation(f"unroll_steps must be >= 1, got {unroll_steps}")
    ensure_contractive(params.A, params.gamma, context="unrolled oracle")
    XW = data.X @ params.W
    Phi = relu(XW)
    gamma_A = params.gamma * params.A

    Z = np.zeros_like(Phi)
    history: List[Tuple[np.ndarray, np.ndarray]] = []
    for _ in range(unroll_steps):
        pre = Z @ gamma_A + Phi
        history.append((Z, relu_derivative(pre)))
        Z = relu(pre)

    r = Z @ params.b - data.y
    db = Z.T @ r
    upstream = np.outer(r, params.b)
    dA = np.zeros_like(params.A)
    dPhi = np.zeros_like(Phi)
    for Z_prev, mask in reversed(history):
        P = upstream * mask
        dA += params.gamma * (Z_prev.T @ P)
        dPhi += P
        upstream = P @ gamma_A.T
    dW = data.X.T @ (dPhi * relu_derivative(XW))
    return Gradients(dW=dW, dA=dA, db=db)


def relative_error(candidate: np.ndarray, reference: np.ndarray) -> float:
    """||candidate - reference||_F / ||reference||_F, 0 when both are exactly zero."""
    gap = float(np.linalg.norm(np.asarray(candidate) - np.asarray(reference)))
    scale = float(np.linalg.norm(reference))
    if scale == 0.0:
        return 0.0 if gap == 0.0 else float("inf")
    return gap / scale


def compare_gradients(candidate: Gradients, reference: Gradients) -> Dict[str, float]:
    return {
        block: relative_error(candidate.blocks()[block], reference.blocks()[block])
        for block in BLOCKS
    }


def sample_mask_stable_instance(
    N: int = 4,
    d: int = 3,
    m: int = 5,
    gamma0: float = 0.5,
    seed: int = 0,
    kink_margin: float = 1e-4,
    zero_output_weights: bool = False,
    max_tries: int = MAX_RESAMPLES,
) -> Tuple[Params, Dataset]:
    """
    Draw W, A, b ~ N(0, 1), gamma = gamma0 / ||A||, unit-norm rows of X and
    y ~ N(0, 1), redrawing until every pre-activation clears ``kink_margin``.
    """
    rng = np.random.default_rng(seed)
    for attempt in range(1, max_tries + 1):
        W = rng.standard_normal((d, m))
        A = rng.standard_normal((m, m))
        b = np.zeros(m) if zero_output_weights else rng.standard_normal(m)
        X = normalize_rows(rng.standard_normal((N, d)))
        y = rng.standard_normal(N)
        params = Params(W=W, A=A, b=b, gamma=gamma0 / operator_norm(A)).validate()
        data = Dataset(X=X, y=y).validate()
        if kink_distance(params, data) > kink_margin:
            LOGGER.debug("Mask-stable instance found after %s draws", attempt)
            return params, data
    raise KinkProximity(f"no mask-stable instance within {max_tries} draws")


def grad_check(
    N: int = 4,
    d: int = 3,
    m: int = 5,
    gamma0: float = 0.5,
    seed: int = 0,
    adjoint_tol: float = 1e-10,
    unroll_steps: int = 300,
    fd_step: float = 1e-6,
    kink_margin: float = 1e-4,
    tolerance: float = 1e-5,
    zero_output_weights: bool = False,
) -> GradCheckReport:
    """Implicit gradients against the dense, unrolled and finite-difference oracles."""
    ensure_desk_scale(N, m)
    params, data = sample_mask_stable_instance(
        N, d, m, gamma0, seed, kink_margin=kink_margin, zero_output_weights=zero_output_weights
    )
    tight = SolveOptions.tight()
    implicit = loss_and_gradients(
        params,
        data,
        tight,
        SolveOptions(tol=adjoint_tol, max_iter=tight.max_iter),
    ).grads
    oracles = {
        "dense": dense_lemma2_gradients(params, data, tight),
        "unrolled": unrolled_gradients(params, data, unroll_steps),
        "finite_diff": finite_diff_gradients(params, data, FdOptions(fd_step, kink_margin), tight),
    }

    errors = {f"implicit_vs_{name}": compare_gradients(implicit, oracle) for name, oracle in oracles.items()}
    errors["dense_vs_unrolled"] = compare_gradients(oracles["dense"], oracles["unrolled"])
    block_norms = {
        name: {block: float(np.linalg.norm(value)) for block, value in grads.blocks().items()}
        for name, grads in {"implicit": implicit, **oracles}.items()
    }
    passed = all(error <= tolerance for pair in errors.values() for error in pair.values())
    LOGGER.info("Gradient check %s (tolerance %.1e)", "passed" if passed else "failed", tolerance)
    return GradCheckReport(errors=errors, block_norms=block_norms, tolerance=tolerance, passed=passed)

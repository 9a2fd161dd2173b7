"""
Full-batch gradient descent with per-epoch monitors, the post-hoc monitor
audit, and one-axis sweeps.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

try:  # pragma: no cover - support both package and script execution
    from .core.errors import (
        ContractViolation,
        ImplicitEqError,
        NonContractive,
        StepSizeRejected,
        TrainingHalted,
    )
    from .core.models import (
        Dataset,
        InitReport,
        Params,
        SolveOptions,
        SweepSummary,
        TrainConfig,
        TrainLog,
        TrainResult,
        TrainRow,
        Violation,
    )
    from .equilibrium import solve_forward
    from .implicit_grad import loss_and_gradients
    from .initialization import identity_init
    from .model import feature_map, loss, predict
    from .spectral import operator_norm, smallest_singular_value
except ImportError:  # pragma: no cover - script mode fallback
    from core.errors import (  # type: ignore
        ContractViolation,
        ImplicitEqError,
        NonContractive,
        StepSizeRejected,
        TrainingHalted,
    )
    from core.models import (  # type: ignore
        Dataset,
        InitReport,
        Params,
        SolveOptions,
        SweepSummary,
        TrainConfig,
        TrainLog,
        TrainResult,
        TrainRow,
        Violation,
    )
    from equilibrium import solve_forward  # type: ignore
    from implicit_grad import loss_and_gradients  # type: ignore
    from initialization import identity_init  # type: ignore
    from model import feature_map, loss, predict  # type: ignore
    from spectral import operator_norm, smallest_singular_value  # type: ignore

LOGGER = logging.getLogger(__name__)

GRADIENT_FLOW_DIVISOR = 100.0
MONITOR_SLACK = 1e-9
SWEEP_AXES = ("gamma", "width", "eta")
ITERATION_AVERAGE_NOTE = "mean forward iterations over every evaluation of the run, epochs 0..epochs"


def _test_loss(params: Params, test: Dataset, opts: SolveOptions) -> float:
    state = solve_forward(params, feature_map(test.X, params.W), opts)
    return loss(predict(state.Z, params.b), test.y)


def _effective_eta(config: TrainConfig, report: Optional[InitReport]) -> float:
    if config.gradient_flow:
        if report is None:
            raise ContractViolation("gradient-flow mode derives eta from an initialization report")
        return report.eta_max / GRADIENT_FLOW_DIVISOR
    return float(config.eta)


def train(
    params: Params,
    data: Dataset,
    config: TrainConfig,
    test: Optional[Dataset] = None,
    report: Optional[InitReport] = None,
) -> TrainResult:
    """
    Run ``config.epochs`` gradient steps and log rows for epochs 0..epochs.

    The last row evaluates the final parameters without updating them.
    Strict mode raises TrainingHalted the first epoch gamma * ||A(k)|| >= 1;
    experiment mode records the epoch in ``notes`` and keeps going until the
    loss stops being finite.
    """
    current = params.copy().validate()
    data = data.validate()
    if test is not None:
        test = test.validate()

    entry_norm = current.gamma * operator_norm(current.A, seed=config.seed)
    if entry_norm >= 1.0:
        raise NonContractive(f"gamma*||A(0)|| = {entry_norm:.6g} >= 1 at entry", gamma_norm=entry_norm)

    eta = _effective_eta(config, report)
    if config.strict and report is not None and eta > report.eta_max:
        raise StepSizeRejected(f"eta = {eta:.3e} exceeds the certified bound {report.eta_max:.3e}")

    notes: Dict[str, Any] = {
        "eta_effective": eta,
        "iteration_average": ITERATION_AVERAGE_NOTE,
        "noncontractive_epochs": [],
        "unconverged_forward_epochs": [],
    }
    log = TrainLog(config=config.to_dict(), init_report=report, notes=notes)

    alpha0: Optional[float] = report.alpha0 if report is not None else None
    L0: Optional[float] = None
    previous_Z: Optional[np.ndarray] = None
    log_every = max(1, config.epochs // 10)

    for epoch in range(config.epochs + 1):
        A_opnorm = operator_norm(current.A, seed=config.seed)
        gamma_norm = current.gamma * A_opnorm
        if gamma_norm >= 1.0:
            if config.strict:
                LOGGER.error("Epoch %s: gamma*||A|| = %.6g >= 1, halting", epoch, gamma_norm)
                raise TrainingHalted(
                    f"gamma*||A({epoch})|| = {gamma_norm:.6g} >= 1; training halted",
                    epoch=epoch,
                    gamma_norm=gamma_norm,
                    log=log,
                )
            LOGGER.warning("Epoch %s: gamma*||A|| = %.6g >= 1, continuing in experiment mode", epoch, gamma_norm)
            notes["noncontractive_epochs"].append(epoch)

        evaluation = loss_and_gradients(
            current,
            data,
            config.forward_opts,
            config.adjoint_opts,
            Z0=previous_Z,
            allow_unconverged=not config.strict,
        )
        if not math.isfinite(evaluation.loss) or not evaluation.grads.is_finite():
            LOGGER.warning(
                "Epoch %s: loss is no longer finite (train_loss=%s, gamma*||A||=%.6g), stopping",
                epoch,
                evaluation.loss,
                gamma_norm,
            )
            notes["diverged_at"] = epoch
            notes["diverged_loss"] = float(evaluation.loss)
            notes["diverged_gammaA_opnorm"] = float(gamma_norm)
            break
        if not evaluation.state.converged:
            notes["unconverged_forward_epochs"].append(epoch)
        log.iteration_history.append(
            (evaluation.telemetry.forward_iterations, evaluation.telemetry.adjoint_iterations)
        )

        if L0 is None:
            L0 = evaluation.loss
            if alpha0 is None:
                N, m = evaluation.state.Z.shape
                alpha0 = smallest_singular_value(evaluation.state.Z) if N <= m else 0.0

        if epoch % config.monitor_every == 0 or epoch == config.epochs:
            row = _monitor_row(epoch, current, evaluation, A_opnorm, gamma_norm, eta, alpha0, L0, config, test)
            log.rows.append(row)
            if epoch % log_every == 0 or epoch == config.epochs:
                LOGGER.info(
                    "Epoch %s: train_loss=%.6e gammaA=%.4f forward_iters=%s",
                    epoch,
                    row.train_loss,
                    row.gammaA_opnorm,
                    row.forward_iters,
                )

        if epoch == config.epochs:
            break
        grads = evaluation.grads
        current = Params(
            W=current.W - eta * grads.dW,
            A=current.A - eta * grads.dA,
            b=current.b - eta * grads.db,
            gamma=current.gamma,
        )
        previous_Z = evaluation.state.Z if config.forward_opts.warm_start else None

    return TrainResult(final=current, log=log)


def _monitor_row(
    epoch: int,
    params: Params,
    evaluation: Any,
    A_opnorm: float,
    gamma_norm: float,
    eta: float,
    alpha0: float,
    L0: float,
    config: TrainConfig,
    test: Optional[Dataset],
) -> TrainRow:
    N, m = evaluation.state.Z.shape
    sigma_min_Z = None
    if config.monitor_spectral and N <= m:
        sigma_min_Z = smallest_singular_value(evaluation.state.Z)
    flow_envelope = None
    if config.gradient_flow:
        flow_envelope = math.exp(-(alpha0**2) * epoch * eta / 2.0) * L0
    return TrainRow(
        epoch=epoch,
        train_loss=evaluation.loss,
        test_loss=_test_loss(params, test, config.forward_opts) if test is not None else None,
        A_opnorm=A_opnorm,
        gammaA_opnorm=gamma_norm,
        sigma_min_Z=sigma_min_Z,
        forward_iters=evaluation.telemetry.forward_iterations,
        adjoint_iters=evaluation.telemetry.adjoint_iterations,
        rate_envelope=(1.0 - eta * alpha0**2 / 4.0) ** epoch * L0,
        W_opnorm=operator_norm(params.W, seed=config.seed),
        b_norm=float(np.linalg.norm(params.b)),
        forward_converged=evaluation.state.converged,
        flow_envelope=flow_envelope,
    )


def verify_theorem2(log: TrainLog, report: InitReport, slack: float = MONITOR_SLACK) -> List[Violation]:
    """Audit every logged epoch against the norm caps, the sigma_min floor and the rate envelope."""
    violations: List[Violation] = []
    for row in log.rows:
        upper_checks = (
            ("W_opnorm", row.W_opnorm, report.lambda1),
            ("A_opnorm", row.A_opnorm, report.lambda2),
            ("b_norm", row.b_norm, report.lambda3),
            ("train_loss", row.train_loss, row.rate_envelope),
        )
        for quantity, observed, bound in upper_checks:
            if observed > bound * (1.0 + slack):
                violations.append(Violation(row.epoch, quantity, float(observed), float(bound)))
        if row.sigma_min_Z is not None:
            floor = report.alpha0 / 2.0
            if row.sigma_min_Z < floor * (1.0 - slack):
                violations.append(Violation(row.epoch, "sigma_min_Z", float(row.sigma_min_Z), floor))
    return violations


def _sweep_cell(
    axis: str,
    value: float,
    data: Dataset,
    make_params: Callable[[str, float], Params],
    config: TrainConfig,
    test: Optional[Dataset],
) -> SweepSummary:
    summary = SweepSummary(axis=axis, value=value)
    try:
        params = make_params(axis, value)
        cell_config = replace(config, eta=float(value)) if axis == "eta" else config
        result = train(params, data, cell_config, test=test)
    except TrainingHalted as exc:
        summary.status = "halted"
        summary.error = str(exc)
        summary.log = exc.log
        return summary
    except (ImplicitEqError, FloatingPointError, ValueError) as exc:
        summary.status = "failed"
        summary.error = f"{type(exc).__name__}: {exc}"
        return summary

    log = result.log
    summary.log = log
    summary.avg_forward_iters = log.avg_forward_iters()
    summary.max_gammaA_opnorm = log.max_gammaA_opnorm()
    if log.rows:
        summary.final_train_loss = log.rows[-1].train_loss
        summary.final_test_loss = log.rows[-1].test_loss
    if "diverged_at" in log.notes:
        summary.status = "diverged"
        summary.error = (
            f"diverged at epoch {log.notes['diverged_at']}: "
            f"train_loss={log.notes['diverged_loss']!r}, "
            f"gamma*||A||={log.notes['diverged_gammaA_opnorm']:.6g}"
        )
    return summary


def run_sweep(
    axis: str,
    values: Sequence[float],
    data: Dataset,
    make_params: Callable[[str, float], Params],
    config: TrainConfig,
    test: Optional[Dataset] = None,
    parallel: int = 0,
) -> List[SweepSummary]:
    """
    Train once per value along one axis (``gamma``, ``width`` or ``eta``).

    ``make_params(axis, value)`` builds the initialization of a cell; with
    ``parallel > 1`` it must be picklable. Cell failures are recorded in the
    summary and never abort the sweep; summaries keep the order of ``values``.
    """
    if axis not in SWEEP_AXES:
        raise ContractViolation(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ContractViolation("sweep needs at least one value")

    worker = partial(_sweep_cell, axis, data=data, make_params=make_params, config=config, test=test)
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            summaries = list(pool.map(worker, values))
    else:
        summaries = [worker(value) for value in values]

    for summary in summaries:
        if summary.status == "ok":
            LOGGER.info(
                "Sweep %s=%s: avg_forward_iters=%.2f final_train_loss=%.6e",
                axis,
                summary.value,
                summary.avg_forward_iters,
                summary.final_train_loss,
            )
        else:
            LOGGER.error("Sweep %s=%s %s: %s", axis, summary.value, summary.status, summary.error)
    return summaries


def _identity_cell_params(axis: str, value: float, d: int, m: int, beta: float, seed: int) -> Params:
    return identity_init(d, m, gamma=float(value), beta=beta, seed=seed)


def gamma_sweep(
    data: Dataset,
    m: int,
    gammas: Sequence[float],
    config: TrainConfig,
    test: Optional[Dataset] = None,
    beta: float = 1.0,
    seed: int = 0,
    parallel: int = 0,
) -> List[SweepSummary]:
    """
    One run per gamma from the A(0) = I initialization, in experiment mode
    with the capped forward solve (1e-2 absolute, 100 iterations).
    """
    sweep_config = replace(config, mode="experiment", forward_opts=SolveOptions.experiment())
    make_params = partial(_identity_cell_params, d=data.d, m=m, beta=beta, seed=seed)
    return run_sweep("gamma", gammas, data, make_params, sweep_config, test=test, parallel=parallel)

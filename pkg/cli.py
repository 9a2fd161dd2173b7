#!/usr/bin/env python3
"""
Command-line surface for training and certifying ReLU implicit networks.

Subcommands:
    check-init   evaluate the initial convergence conditions, print the report
    train        full-batch gradient descent, CSV log plus JSON sidecar
    sweep        one-axis sweep over gamma, width or eta with a summary CSV
    grad-check   implicit gradients against the dense, unrolled and FD oracles

Exit codes: 0 ok, 1 check failure, 2 configuration error, 3 well-posedness
error, 4 training halted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

try:  # pragma: no cover - support both package and script execution
    from .core.artifacts import (
        load_params,
        save_params,
        write_log_csv,
        write_sidecar_json,
        write_summary_csv,
    )
    from .core.config import DatasetSpec, InitSpec, RunConfig, TrainSpec, load_run_config
    from .core.errors import (
        BetaCapExceeded,
        ConfigurationError,
        ContractViolation,
        DegenerateFeatures,
        GammaTooLarge,
        IdxFormatError,
        ImplicitEqError,
        NonContractive,
        NotConverged,
        ShapeError,
        StepSizeRejected,
        TooLarge,
        TrainingHalted,
    )
    from .core.models import Dataset, InitReport, Params, TrainConfig
    from .data import load_idx, make_binary_split, make_binary_subset, normalize_rows, synthetic
    from .initialization import (
        check_conditions,
        deterministic_init,
        identity_init,
        random_init,
        scale_to_satisfy,
        select_step_size,
    )
    from .trainer import gamma_sweep, run_sweep, train
    from .verify import grad_check
except ImportError:  # pragma: no cover - script mode fallback
    from core.artifacts import (  # type: ignore
        load_params,
        save_params,
        write_log_csv,
        write_sidecar_json,
        write_summary_csv,
    )
    from core.config import DatasetSpec, InitSpec, RunConfig, TrainSpec, load_run_config  # type: ignore
    from core.errors import (  # type: ignore
        BetaCapExceeded,
        ConfigurationError,
        ContractViolation,
        DegenerateFeatures,
        GammaTooLarge,
        IdxFormatError,
        ImplicitEqError,
        NonContractive,
        NotConverged,
        ShapeError,
        StepSizeRejected,
        TooLarge,
        TrainingHalted,
    )
    from core.models import Dataset, InitReport, Params, TrainConfig  # type: ignore
    from data import load_idx, make_binary_split, make_binary_subset, normalize_rows, synthetic  # type: ignore
    from initialization import (  # type: ignore
        check_conditions,
        deterministic_init,
        identity_init,
        random_init,
        scale_to_satisfy,
        select_step_size,
    )
    from trainer import gamma_sweep, run_sweep, train  # type: ignore
    from verify import grad_check  # type: ignore

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_WELL_POSEDNESS = 3
EXIT_HALTED = 4

EXIT_CODES_HELP = """exit codes:
  0  success, or the check passed
  1  a condition or tolerance check failed, or every sweep cell failed
  2  configuration or input error, or a step size above eta_max in strict mode
  3  well-posedness error (gamma0 >= 1, or a solve that cannot converge outside train/sweep)
  4  training halted: gamma*||A|| >= 1 at entry or during a strict run, or an unconverged solve in train/sweep
"""

FAILED_CELL_STATUSES = ("failed", "halted")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        help="Path to the JSON run config (default: $IMPLICIT_EQ_CONFIG, then ./config.json).",
    )
    common.add_argument("--out", help="Output directory (overrides output_dir from the config).")
    common.add_argument(
        "--mode",
        choices=("strict", "experiment"),
        help="Override the config mode.",
    )
    common.add_argument(
        "--verbose",
        action="store_true",
        help="Enable debug logging.",
    )

    parser = argparse.ArgumentParser(
        description="Train and certify ReLU implicit networks.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("check-init", parents=[common], help="Evaluate the initial convergence conditions.")
    commands.add_parser("train", parents=[common], help="Run full-batch gradient descent.")
    sweep = commands.add_parser("sweep", parents=[common], help="Sweep one of gamma, width or eta.")
    sweep.add_argument(
        "--parallel",
        type=int,
        default=0,
        help="Run sweep cells in this many worker processes (default: sequential).",
    )
    commands.add_parser("grad-check", parents=[common], help="Compare gradients against the oracles.")
    return parser.parse_args(argv)


def derived_seeds(seed: int) -> Dict[str, int]:
    """Independent integer seeds for the data draw, the held-out draw and the initialization."""
    data_seed, test_seed, init_seed = np.random.SeedSequence(seed).generate_state(3)
    return {"data": int(data_seed), "test": int(test_seed), "init": int(init_seed)}


def _synthetic_pair(spec: DatasetSpec, seeds: Dict[str, int]) -> Tuple[Dataset, Optional[Dataset]]:
    train_set = synthetic(spec.N, spec.d, seeds["data"], spec.label_mode)
    test_set = synthetic(spec.test_N, spec.d, seeds["test"], spec.label_mode) if spec.test_N else None
    return train_set, test_set


def load_datasets(spec: DatasetSpec, seed: int) -> Tuple[Dataset, Optional[Dataset]]:
    """Build train and optional held-out sets; IDX inputs get unit-norm rows."""
    seeds = derived_seeds(seed)
    if spec.kind == "synthetic":
        return _synthetic_pair(spec, seeds)

    paths = [spec.train_images, spec.train_labels]
    if not all(path and Path(path).exists() for path in paths):
        if spec.fallback is not None:
            LOGGER.warning("IDX files %s not found; falling back to synthetic data", paths)
            return _synthetic_pair(spec.fallback, seeds)
        raise ConfigurationError(f"IDX files not found: {paths}")

    raw = load_idx(spec.train_images, spec.train_labels)
    test_set: Optional[Dataset] = None
    if spec.test_images and spec.test_labels:
        train_set = make_binary_subset(raw, spec.classes, spec.n_per_class, seeds["data"])
        test_raw = load_idx(spec.test_images, spec.test_labels)
        test_set = make_binary_subset(test_raw, spec.classes, spec.n_test_per_class or spec.n_per_class, seeds["test"])
    elif spec.n_test_per_class:
        train_set, test_set = make_binary_split(raw, spec.classes, spec.n_per_class, spec.n_test_per_class, seeds["data"])
    else:
        train_set = make_binary_subset(raw, spec.classes, spec.n_per_class, seeds["data"])

    train_set = Dataset(X=normalize_rows(train_set.X), y=train_set.y)
    if test_set is not None:
        test_set = Dataset(X=normalize_rows(test_set.X), y=test_set.y)
    return train_set, test_set


def build_params(
    spec: InitSpec,
    data: Dataset,
    seed: int,
    width: Optional[int] = None,
    gamma: Optional[float] = None,
) -> Params:
    m = int(width) if width is not None else spec.width
    if spec.kind == "deterministic":
        params = deterministic_init(data.X, m, spec.beta, seed, spec.gamma0, spec.C[1])
    elif spec.kind == "random":
        params = random_init(data.d, m, seed, spec.gamma0)
    elif spec.kind == "identity":
        return identity_init(data.d, m, gamma if gamma is not None else spec.gamma, spec.beta, seed)
    else:
        params = load_params(spec.path)
        if width is not None and params.m != m:
            raise ConfigurationError(f"explicit parameters have width {params.m}, sweep asked for {m}")
        if params.d != data.d:
            raise ConfigurationError(f"explicit parameters expect d={params.d}, data has d={data.d}")
    if gamma is not None:
        params = params.with_gamma(gamma).validate()
    return params


def _sweep_cell_params(axis: str, value: float, spec: InitSpec, data: Dataset, seed: int) -> Params:
    if axis == "width":
        return build_params(spec, data, seed, width=int(value))
    if axis == "gamma":
        return build_params(spec, data, seed, gamma=float(value))
    return build_params(spec, data, seed)


def initial_point(config: RunConfig, data: Dataset, strict_report: bool) -> Tuple[Params, Optional[InitReport]]:
    """
    Build the initialization and its condition report. With ``strict_report``
    unset, a report that cannot be evaluated is logged and skipped.
    """
    spec = config.init
    C1, C2, C3 = spec.C
    solve_opts = config.train.forward.to_options(config.mode)
    params = build_params(spec, data, derived_seeds(config.seed)["init"])
    try:
        if spec.scale_to_satisfy:
            scaled = scale_to_satisfy(params, data, C1, C2, C3, solve_opts, gamma0=spec.gamma0)
            LOGGER.info("Scaled initialization by beta=%g", scaled.beta)
            return scaled.params, scaled.report
        return params, check_conditions(params, data, C1, C2, C3, solve_opts)
    except (GammaTooLarge, ShapeError, NotConverged) as exc:
        if strict_report:
            raise
        LOGGER.warning("Initialization report unavailable: %s", exc)
        return params, None


def _needs_report(spec: TrainSpec) -> bool:
    return spec.eta == "certified" or spec.gradient_flow


def train_config_for(config: RunConfig, data: Dataset, report: Optional[InitReport]) -> TrainConfig:
    spec = config.train
    if _needs_report(spec) and report is None:
        raise ConfigurationError("'train.eta' = 'certified' and 'train.gradient_flow' need an initialization report")
    return TrainConfig(
        eta=select_step_size(spec.eta, data, report),
        epochs=spec.epochs,
        forward_opts=spec.forward.to_options(config.mode),
        adjoint_opts=spec.adjoint.to_options(config.mode),
        monitor_spectral=spec.monitor_spectral,
        monitor_every=spec.monitor_every,
        seed=config.seed,
        mode=config.mode,
        gradient_flow=spec.gradient_flow,
    )


def cmd_check_init(config: RunConfig) -> int:
    data, _ = load_datasets(config.dataset, config.seed)
    try:
        _, report = initial_point(config, data, strict_report=True)
    except (DegenerateFeatures, BetaCapExceeded) as exc:
        LOGGER.error("Conditions cannot be met: %s", exc)
        return EXIT_CHECK_FAILED
    assert report is not None
    print(json.dumps(report.to_dict(), indent=2))
    if report.gd_passed:
        LOGGER.info("Gradient-descent conditions hold (eta_max=%.3e)", report.eta_max)
        return EXIT_OK
    LOGGER.info("Gradient-descent conditions fail: %s", report.gd_conditions)
    return EXIT_CHECK_FAILED


def cmd_train(config: RunConfig, out_dir: Path) -> int:
    data, test = load_datasets(config.dataset, config.seed)
    params, report = initial_point(config, data, strict_report=_needs_report(config.train))
    train_config = train_config_for(config, data, report)
    run_config = config.to_dict()

    try:
        result = train(params, data, train_config, test=test, report=report)
    except TrainingHalted as exc:
        if exc.log is not None:
            write_log_csv(exc.log, out_dir / "train_log.csv")
            write_sidecar_json(exc.log, out_dir / "train_log.json", run_config, config.report_timezone)
        raise

    log = result.log
    write_log_csv(log, out_dir / "train_log.csv")
    write_sidecar_json(log, out_dir / "train_log.json", run_config, config.report_timezone)
    save_params(out_dir / "final_params.npz", result.final)

    final = log.rows[-1] if log.rows else None
    if final is None:
        print("final train_loss= test_loss=")
    else:
        test_text = "" if final.test_loss is None else repr(final.test_loss)
        print(f"final train_loss={final.train_loss!r} test_loss={test_text}")
    return EXIT_OK


def cmd_sweep(config: RunConfig, out_dir: Path, parallel: int = 0) -> int:
    axis = config.sweep.axis
    if axis is None:
        raise ConfigurationError("exactly one of 'sweep.gamma', 'sweep.width', 'sweep.eta' must be non-empty")
    values = config.sweep.values
    if _needs_report(config.train):
        raise ConfigurationError("sweeps take a numeric or 'inverse_n' 'train.eta' without gradient_flow")
    data, test = load_datasets(config.dataset, config.seed)
    base_config = train_config_for(config, data, None)

    init_seed = derived_seeds(config.seed)["init"]
    if axis == "gamma":
        summaries = gamma_sweep(
            data,
            config.init.width,
            values,
            base_config,
            test=test,
            beta=config.init.beta,
            seed=init_seed,
            parallel=parallel,
        )
    else:
        make_params = partial(_sweep_cell_params, spec=config.init, data=data, seed=init_seed)
        summaries = run_sweep(axis, values, data, make_params, base_config, test=test, parallel=parallel)

    run_config = config.to_dict()
    for summary in summaries:
        if summary.log is None:
            continue
        stem = f"cell_{axis}_{summary.value:g}"
        write_log_csv(summary.log, out_dir / f"{stem}.csv")
        write_sidecar_json(summary.log, out_dir / f"{stem}.json", run_config, config.report_timezone)
    write_summary_csv(summaries, out_dir / "sweep_summary.csv")

    if all(summary.status in FAILED_CELL_STATUSES for summary in summaries):
        LOGGER.error("Every sweep cell failed")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_grad_check(config: RunConfig) -> int:
    spec = config.grad_check
    report = grad_check(
        N=spec.N,
        d=spec.d,
        m=spec.m,
        gamma0=spec.gamma0,
        seed=config.seed,
        adjoint_tol=spec.adjoint_tol,
        unroll_steps=spec.unroll_steps,
        fd_step=spec.fd_step,
        kink_margin=spec.kink_margin,
        tolerance=spec.tolerance,
        zero_output_weights=spec.zero_output_weights,
    )
    payload = {
        "errors": report.errors,
        "block_norms": report.block_norms,
        "tolerance": report.tolerance,
        "passed": report.passed,
    }
    print(json.dumps(payload, indent=2))
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if args.mode:
        config.mode = args.mode
    out_dir = Path(args.out or config.output_dir).expanduser()

    if args.command == "check-init":
        return cmd_check_init(config)
    if args.command == "train":
        return cmd_train(config, out_dir)
    if args.command == "sweep":
        return cmd_sweep(config, out_dir, parallel=args.parallel)
    return cmd_grad_check(config)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(message)s",
    )

    try:
        return run(args)
    except ConfigurationError as exc:
        logging.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except StepSizeRejected as exc:
        logging.error("Step size rejected: %s", exc)
        return EXIT_CONFIG
    except (ContractViolation, IdxFormatError, TooLarge) as exc:
        logging.error("Invalid input: %s", exc)
        return EXIT_CONFIG
    except TrainingHalted as exc:
        logging.error("Training halted at epoch %s: %s", exc.epoch, exc)
        return EXIT_HALTED
    except NotConverged as exc:
        logging.error("Solver did not converge: %s", exc)
        return EXIT_HALTED if args.command in ("train", "sweep") else EXIT_WELL_POSEDNESS
    except NonContractive as exc:
        logging.error("Contraction lost: %s", exc)
        return EXIT_HALTED if args.command in ("train", "sweep") else EXIT_WELL_POSEDNESS
    except GammaTooLarge as exc:
        logging.error("Well-posedness error: %s", exc)
        return EXIT_WELL_POSEDNESS
    except ImplicitEqError as exc:
        logging.error("Run failed: %s", exc)
        return EXIT_CHECK_FAILED
    except Exception as exc:  # pragma: no cover - unexpected failure guard
        logging.exception("Unexpected failure: %s", exc)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())

from __future__ import annotations

from .models import (
    Dataset,
    EquilibriumState,
    AdjointState,
    Gradients,
    InitReport,
    Params,
    SolveOptions,
    TrainConfig,
    TrainLog,
    TrainRow,
)
from .config import RunConfig, load_run_config
from .errors import ConfigurationError, ContractViolation, ImplicitEqError, NonContractive, NotConverged

__all__ = [
    "AdjointState",
    "ConfigurationError",
    "ContractViolation",
    "Dataset",
    "EquilibriumState",
    "Gradients",
    "ImplicitEqError",
    "InitReport",
    "NonContractive",
    "NotConverged",
    "Params",
    "RunConfig",
    "SolveOptions",
    "TrainConfig",
    "TrainLog",
    "TrainRow",
    "load_run_config",
]

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Tuple, Union

from .errors import ConfigurationError
from .models import SolveOptions

CONFIG_ENV_VAR = "IMPLICIT_EQ_CONFIG"
SEED_ENV_VAR = "IMPLICIT_EQ_SEED"
PROJECT_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG_PATH = PROJECT_ROOT / "config.json"

MODES = ("strict", "experiment")
DATASET_KINDS = ("synthetic", "idx")
INIT_KINDS = ("deterministic", "random", "identity", "explicit")
LABEL_MODES = ("signs", "teacher", "planted")
ETA_RULES = ("inverse_n", "certified")
SWEEP_AXES = ("gamma", "width", "eta")


@dataclass
class SolverSpec:
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    relative: Optional[bool] = None
    warm_start: bool = False

    def to_options(self, mode: str, check_contraction: bool = False) -> SolveOptions:
        base = SolveOptions.precise() if mode == "strict" else SolveOptions.experiment()
        return SolveOptions(
            tol=self.tol if self.tol is not None else base.tol,
            max_iter=self.max_iter if self.max_iter is not None else base.max_iter,
            relative=self.relative if self.relative is not None else base.relative,
            check_contraction=check_contraction,
            warm_start=self.warm_start,
        )


@dataclass
class DatasetSpec:
    kind: str = "synthetic"
    N: int = 50
    d: int = 10
    label_mode: str = "signs"
    test_N: int = 0
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    classes: Tuple[int, int] = (0, 1)
    n_per_class: int = 500
    n_test_per_class: int = 0
    fallback: Optional["DatasetSpec"] = None


@dataclass
class InitSpec:
    kind: str = "deterministic"
    width: int = 100
    beta: float = 1.0
    gamma: float = 0.1
    gamma0: float = 0.5
    C: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    scale_to_satisfy: bool = False
    path: Optional[str] = None


@dataclass
class TrainSpec:
    eta: Union[float, str] = "inverse_n"
    epochs: int = 500
    monitor_spectral: bool = True
    monitor_every: int = 1
    gradient_flow: bool = False
    forward: SolverSpec = field(default_factory=SolverSpec)
    adjoint: SolverSpec = field(default_factory=SolverSpec)


@dataclass
class SweepSpec:
    gamma: List[float] = field(default_factory=list)
    width: List[int] = field(default_factory=list)
    eta: List[float] = field(default_factory=list)

    @property
    def active_axes(self) -> List[str]:
        return [axis for axis in SWEEP_AXES if getattr(self, axis)]

    @property
    def axis(self) -> Optional[str]:
        axes = self.active_axes
        return axes[0] if len(axes) == 1 else None

    @property
    def values(self) -> List[float]:
        axis = self.axis
        return list(getattr(self, axis)) if axis else []


@dataclass
class GradCheckSpec:
    N: int = 4
    d: int = 3
    m: int = 5
    gamma0: float = 0.5
    adjoint_tol: float = 1e-10
    unroll_steps: int = 300
    fd_step: float = 1e-6
    kink_margin: float = 1e-4
    tolerance: float = 1e-5
    zero_output_weights: bool = False


@dataclass
class RunConfig:
    """Parsed run configuration: dataset, init, training, sweep and grad-check specs."""

    seed: int = 0
    mode: str = "strict"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    init: InitSpec = field(default_factory=InitSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    grad_check: GradCheckSpec = field(default_factory=GradCheckSpec)
    output_dir: str = "runs"
    report_timezone: str = "UTC"
    source: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_run_config(path: Path | str | None = None) -> RunConfig:
    """
    Load and validate a run configuration from JSON.

    ENV overrides: IMPLICIT_EQ_CONFIG (path), IMPLICIT_EQ_SEED (seed).
    """
    config_path = _resolve_config_path(path)
    if not config_path.exists():
        raise ConfigurationError(f"Config file not found: {config_path}")

    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Malformed JSON in {config_path}: {exc}") from exc

    config = parse_run_config(payload, base_dir=config_path.parent)
    config.source = str(config_path)
    return config


def parse_run_config(payload: Any, base_dir: Path | None = None) -> RunConfig:
    """Validate a decoded JSON document; unknown keys are rejected."""
    root = _section(payload, "config", _fields(RunConfig) - {"source"})
    base = base_dir or Path.cwd()

    seed = _take(root, "seed", int, 0, "seed")
    env_seed = os.getenv(SEED_ENV_VAR)
    if env_seed:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc

    mode = _choice(root, "mode", MODES, "strict", "mode")
    config = RunConfig(
        seed=seed,
        mode=mode,
        dataset=_parse_dataset(root.get("dataset", {}), "dataset", base),
        init=_parse_init(root.get("init", {}), "init", base),
        train=_parse_train(root.get("train", {}), "train"),
        sweep=_parse_sweep(root.get("sweep", {}), "sweep"),
        grad_check=_parse_grad_check(root.get("grad_check", {}), "grad_check"),
        output_dir=_take(root, "output_dir", str, "runs", "output_dir"),
        report_timezone=_take(root, "report_timezone", str, "UTC", "report_timezone"),
    )
    return config


def _parse_dataset(raw: Any, where: str, base: Path) -> DatasetSpec:
    section = _section(raw, where, _fields(DatasetSpec))
    kind = _choice(section, "kind", DATASET_KINDS, "synthetic", f"{where}.kind")
    classes_raw = section.get("classes", [0, 1])
    if not isinstance(classes_raw, list) or len(classes_raw) != 2 or len(set(classes_raw)) != 2:
        raise ConfigurationError(f"'{where}.classes' must be a list of two distinct class ids")
    spec = DatasetSpec(
        kind=kind,
        N=_positive_int(section, "N", 50, f"{where}.N"),
        d=_positive_int(section, "d", 10, f"{where}.d"),
        label_mode=_choice(section, "label_mode", LABEL_MODES, "signs", f"{where}.label_mode"),
        test_N=_take(section, "test_N", int, 0, f"{where}.test_N", minimum=0),
        classes=(int(classes_raw[0]), int(classes_raw[1])),
        n_per_class=_positive_int(section, "n_per_class", 500, f"{where}.n_per_class"),
        n_test_per_class=_take(section, "n_test_per_class", int, 0, f"{where}.n_test_per_class", minimum=0),
    )
    for key in ("train_images", "train_labels", "test_images", "test_labels"):
        value = section.get(key)
        if value is not None:
            setattr(spec, key, str(_expand(value, base)))
    if kind == "idx" and not (spec.train_images and spec.train_labels):
        raise ConfigurationError(f"'{where}.train_images' and '{where}.train_labels' are required for idx datasets")
    if "fallback" in section and section["fallback"] is not None:
        spec.fallback = _parse_dataset(section["fallback"], f"{where}.fallback", base)
        if spec.fallback.kind != "synthetic":
            raise ConfigurationError(f"'{where}.fallback.kind' must be 'synthetic'")
    return spec


def _parse_init(raw: Any, where: str, base: Path) -> InitSpec:
    section = _section(raw, where, _fields(InitSpec))
    kind = _choice(section, "kind", INIT_KINDS, "deterministic", f"{where}.kind")
    C_raw = section.get("C", [1.0, 1.0, 1.0])
    if not isinstance(C_raw, list) or len(C_raw) != 3 or not all(_is_number(c) and c > 0 for c in C_raw):
        raise ConfigurationError(f"'{where}.C' must be a list of three positive numbers")
    gamma = _take(section, "gamma", float, 0.1, f"{where}.gamma")
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError(f"'{where}.gamma' must lie in (0, 1), got {gamma}")
    spec = InitSpec(
        kind=kind,
        width=_positive_int(section, "width", 100, f"{where}.width"),
        beta=_positive_float(section, "beta", 1.0, f"{where}.beta"),
        gamma=gamma,
        # gamma0 >= 1 is left to the condition checker so it surfaces as a well-posedness error.
        gamma0=_positive_float(section, "gamma0", 0.5, f"{where}.gamma0"),
        C=(float(C_raw[0]), float(C_raw[1]), float(C_raw[2])),
        scale_to_satisfy=_take(section, "scale_to_satisfy", bool, False, f"{where}.scale_to_satisfy"),
    )
    if section.get("path") is not None:
        spec.path = str(_expand(section["path"], base))
    if kind == "explicit" and not spec.path:
        raise ConfigurationError(f"'{where}.path' is required for explicit initialization")
    return spec


def _parse_train(raw: Any, where: str) -> TrainSpec:
    section = _section(raw, where, _fields(TrainSpec))
    eta_raw = section.get("eta", "inverse_n")
    if isinstance(eta_raw, str):
        if eta_raw not in ETA_RULES:
            raise ConfigurationError(f"'{where}.eta' must be a number or one of {ETA_RULES}, got {eta_raw!r}")
        eta: Union[float, str] = eta_raw
    elif _is_number(eta_raw) and eta_raw >= 0:
        eta = float(eta_raw)
    else:
        raise ConfigurationError(f"'{where}.eta' must be a nonnegative number, got {eta_raw!r}")
    return TrainSpec(
        eta=eta,
        epochs=_positive_int(section, "epochs", 500, f"{where}.epochs"),
        monitor_spectral=_take(section, "monitor_spectral", bool, True, f"{where}.monitor_spectral"),
        monitor_every=_positive_int(section, "monitor_every", 1, f"{where}.monitor_every"),
        gradient_flow=_take(section, "gradient_flow", bool, False, f"{where}.gradient_flow"),
        forward=_parse_solver(section.get("forward", {}), f"{where}.forward"),
        adjoint=_parse_solver(section.get("adjoint", {}), f"{where}.adjoint"),
    )


def _parse_solver(raw: Any, where: str) -> SolverSpec:
    section = _section(raw, where, _fields(SolverSpec))
    spec = SolverSpec(warm_start=_take(section, "warm_start", bool, False, f"{where}.warm_start"))
    if "tol" in section:
        spec.tol = _positive_float(section, "tol", 1e-10, f"{where}.tol")
    if "max_iter" in section:
        spec.max_iter = _positive_int(section, "max_iter", 1000, f"{where}.max_iter")
    if "relative" in section:
        spec.relative = _take(section, "relative", bool, True, f"{where}.relative")
    return spec


def _parse_sweep(raw: Any, where: str) -> SweepSpec:
    section = _section(raw, where, _fields(SweepSpec))
    spec = SweepSpec()
    for axis in SWEEP_AXES:
        values = section.get(axis, [])
        if not isinstance(values, list) or not all(_is_number(v) and v > 0 for v in values):
            raise ConfigurationError(f"'{where}.{axis}' must be a list of positive numbers")
        if axis == "gamma" and any(v >= 1 for v in values):
            raise ConfigurationError(f"'{where}.gamma' values must lie in (0, 1)")
        cast = int if axis == "width" else float
        setattr(spec, axis, [cast(v) for v in values])
    if len(spec.active_axes) > 1:
        raise ConfigurationError(
            f"'{where}' varies {spec.active_axes}; exactly one axis per sweep is supported"
        )
    return spec


def _parse_grad_check(raw: Any, where: str) -> GradCheckSpec:
    section = _section(raw, where, _fields(GradCheckSpec))
    return GradCheckSpec(
        N=_positive_int(section, "N", 4, f"{where}.N"),
        d=_positive_int(section, "d", 3, f"{where}.d"),
        m=_positive_int(section, "m", 5, f"{where}.m"),
        gamma0=_positive_float(section, "gamma0", 0.5, f"{where}.gamma0"),
        adjoint_tol=_positive_float(section, "adjoint_tol", 1e-10, f"{where}.adjoint_tol"),
        unroll_steps=_positive_int(section, "unroll_steps", 300, f"{where}.unroll_steps"),
        fd_step=_positive_float(section, "fd_step", 1e-6, f"{where}.fd_step"),
        kink_margin=_take(section, "kink_margin", float, 1e-4, f"{where}.kink_margin", minimum=0.0),
        tolerance=_positive_float(section, "tolerance", 1e-5, f"{where}.tolerance"),
        zero_output_weights=_take(section, "zero_output_weights", bool, False, f"{where}.zero_output_weights"),
    )


def _fields(cls: type) -> set[str]:
    return set(cls.__dataclass_fields__)  # type: ignore[attr-defined]


def _section(raw: Any, where: str, allowed: Iterable[str]) -> Dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigurationError(f"'{where}' must be a JSON object")
    allowed_set = set(allowed)
    for key in raw:
        if key not in allowed_set:
            raise ConfigurationError(f"Unknown key '{where}.{key}'" if where != "config" else f"Unknown key '{key}'")
    return dict(raw)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _take(
    section: Mapping[str, Any],
    key: str,
    cast: Callable[[Any], Any],
    default: Any,
    where: str,
    minimum: Optional[float] = None,
) -> Any:
    if key not in section or section[key] is None:
        return default
    value = section[key]
    if cast is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"'{where}' must be a boolean, got {value!r}")
        return value
    if cast in (int, float):
        if not _is_number(value) or (cast is int and float(value) != int(value)):
            raise ConfigurationError(f"'{where}' must be {'an integer' if cast is int else 'a number'}, got {value!r}")
        value = cast(value)
        if minimum is not None and value < minimum:
            raise ConfigurationError(f"'{where}' must be >= {minimum}, got {value}")
        return value
    if not isinstance(value, str):
        raise ConfigurationError(f"'{where}' must be a string, got {value!r}")
    return value


def _positive_int(section: Mapping[str, Any], key: str, default: int, where: str) -> int:
    return _take(section, key, int, default, where, minimum=1)


def _positive_float(section: Mapping[str, Any], key: str, default: float, where: str) -> float:
    value = _take(section, key, float, default, where)
    if not value > 0:
        raise ConfigurationError(f"'{where}' must be positive, got {value}")
    return value


def _choice(section: Mapping[str, Any], key: str, choices: Tuple[str, ...], default: str, where: str) -> str:
    value = _take(section, key, str, default, where)
    if value not in choices:
        raise ConfigurationError(f"'{where}' must be one of {choices}, got {value!r}")
    return value


def _expand(value: Any, base: Path) -> Path:
    candidate = Path(str(value)).expanduser()
    if not candidate.is_absolute():
        candidate = base / candidate
    return candidate


def _resolve_config_path(path: Path | str | None) -> Path:
    """Resolve config file location: explicit path, then env override, then project default."""
    if path:
        return Path(path).expanduser()
    env_override = os.getenv(CONFIG_ENV_VAR)
    if env_override:
        return Path(env_override).expanduser()
    return DEFAULT_CONFIG_PATH

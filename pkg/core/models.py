from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import ContractViolation, ShapeMismatch

CSV_COLUMNS: Tuple[str, ...] = (
    "epoch",
    "train_loss",
    "test_loss",
    "A_opnorm",
    "gammaA_opnorm",
    "sigma_min_Z",
    "forward_iters",
    "adjoint_iters",
    "rate_envelope",
)


def as_matrix(value: Any, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.ndim != 2:
        raise ShapeMismatch(f"{name} must be a matrix, got shape {array.shape}")
    return array


def as_vector(value: Any, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.ndim != 1:
        raise ShapeMismatch(f"{name} must be a vector, got shape {array.shape}")
    return array


@dataclass
class Params:
    """Trainable state theta = (W, A, b) plus the fixed scale gamma."""

    W: np.ndarray
    A: np.ndarray
    b: np.ndarray
    gamma: float

    @property
    def d(self) -> int:
        return int(self.W.shape[0])

    @property
    def m(self) -> int:
        return int(self.W.shape[1])

    def validate(self) -> "Params":
        W = as_matrix(self.W, "W")
        A = as_matrix(self.A, "A")
        b = as_vector(self.b, "b")
        m = W.shape[1]
        if A.shape != (m, m):
            raise ShapeMismatch(f"A must be {m}x{m}, got {A.shape}")
        if b.shape != (m,):
            raise ShapeMismatch(f"b must have length {m}, got {b.shape}")
        if not 0.0 < float(self.gamma) < 1.0:
            raise ContractViolation(f"gamma must lie in (0, 1), got {self.gamma}")
        for name, array in (("W", W), ("A", A), ("b", b)):
            if not np.all(np.isfinite(array)):
                raise ContractViolation(f"{name} has non-finite entries")
        self.W, self.A, self.b, self.gamma = W, A, b, float(self.gamma)
        return self

    def copy(self) -> "Params":
        return Params(W=self.W.copy(), A=self.A.copy(), b=self.b.copy(), gamma=float(self.gamma))

    def scaled(self, beta: float) -> "Params":
        """Multiply W, A and b by beta; gamma is left alone."""
        return Params(W=self.W * beta, A=self.A * beta, b=self.b * beta, gamma=float(self.gamma))

    def with_gamma(self, gamma: float) -> "Params":
        return replace(self.copy(), gamma=float(gamma))


@dataclass
class Dataset:
    """Inputs X (N x d, one row per sample) and targets y (length N)."""

    X: np.ndarray
    y: np.ndarray

    @property
    def N(self) -> int:
        return int(self.X.shape[0])

    @property
    def d(self) -> int:
        return int(self.X.shape[1])

    def validate(self) -> "Dataset":
        X = as_matrix(self.X, "X")
        y = as_vector(self.y, "y")
        if X.shape[0] < 1:
            raise ShapeMismatch("dataset needs at least one sample")
        if X.shape[0] != y.shape[0]:
            raise ShapeMismatch(f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
        self.X, self.y = X, y
        return self


@dataclass
class SolveOptions:
    """Stopping rule for the Picard solvers.

    With ``relative`` set, the effective threshold is ``tol * max(1, scale)``
    where scale is ||Phi||_F (forward) or ||r b^T||_F (adjoint).
    """

    tol: float = 1e-10
    max_iter: int = 1000
    relative: bool = True
    check_contraction: bool = False
    warm_start: bool = False

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ContractViolation(f"tol must be positive, got {self.tol}")
        if int(self.max_iter) < 1:
            raise ContractViolation(f"max_iter must be >= 1, got {self.max_iter}")
        self.max_iter = int(self.max_iter)

    def threshold(self, scale: float) -> float:
        if self.relative:
            return float(self.tol) * max(1.0, float(scale))
        return float(self.tol)

    @classmethod
    def precise(cls, **overrides: Any) -> "SolveOptions":
        return cls(**{"tol": 1e-10, "max_iter": 1000, "relative": True, **overrides})

    @classmethod
    def experiment(cls, **overrides: Any) -> "SolveOptions":
        # Stopping rule of the published experiments: 1e-2 absolute, 100 sweeps.
        return cls(**{"tol": 1e-2, "max_iter": 100, "relative": False, **overrides})

    @classmethod
    def tight(cls, **overrides: Any) -> "SolveOptions":
        return cls(**{"tol": 1e-15, "max_iter": 20000, "relative": True, **overrides})


@dataclass
class EquilibriumState:
    """Converged Z with activation masks and solver telemetry."""

    Z: np.ndarray
    D_mask: np.ndarray
    E_mask: np.ndarray
    iterations: int
    residual: float
    converged: bool
    tolerance: float
    residual_trace: List[float] = field(default_factory=list)


@dataclass
class AdjointState:
    """N x m reshaping of Q^{-T} vec(r b^T) plus solver telemetry."""

    V: np.ndarray
    iterations: int
    residual: float
    converged: bool
    tolerance: float
    residual_trace: List[float] = field(default_factory=list)


@dataclass
class Gradients:
    dW: np.ndarray
    dA: np.ndarray
    db: np.ndarray

    def blocks(self) -> Dict[str, np.ndarray]:
        return {"dW": self.dW, "dA": self.dA, "db": self.db}

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(block))) for block in self.blocks().values())


@dataclass
class SolveTelemetry:
    forward_iterations: int
    adjoint_iterations: int
    forward_residual: float
    adjoint_residual: float
    forward_converged: bool
    adjoint_converged: bool


@dataclass
class Evaluation:
    """One pass of feature map, forward solve, loss, adjoint solve and gradients."""

    loss: float
    grads: Gradients
    state: EquilibriumState
    adjoint: AdjointState
    telemetry: SolveTelemetry
    yhat: np.ndarray
    residual: np.ndarray


@dataclass
class GramDiagnostics:
    H: np.ndarray
    lambda_min_H: float
    sigma_min_Z: float
    components: Dict[str, float] = field(default_factory=dict)


@dataclass
class InitReport:
    """Constants and condition checks of the convergence guarantees at initialization."""

    alpha0: float
    lambda1: float
    lambda2: float
    lambda3: float
    lambda0: float
    gamma0: float
    C1: float
    C2: float
    C3: float
    gf_conditions: Tuple[bool, bool]
    gd_conditions: Tuple[bool, bool, bool]
    eta_max: float
    lambda_bar: float
    initial_residual_norm: float
    gamma: float = 0.0
    x_fro: float = 0.0
    sigma_min_phi: float = 0.0
    alpha0_lower_bound: float = 0.0
    usable: bool = False

    @property
    def gd_passed(self) -> bool:
        return all(self.gd_conditions)

    @property
    def gf_passed(self) -> bool:
        return all(self.gf_conditions)

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["gf_conditions"] = [bool(flag) for flag in self.gf_conditions]
        payload["gd_conditions"] = [bool(flag) for flag in self.gd_conditions]
        return payload

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "InitReport":
        data = dict(payload)
        data["gf_conditions"] = tuple(bool(flag) for flag in data["gf_conditions"])
        data["gd_conditions"] = tuple(bool(flag) for flag in data["gd_conditions"])
        return cls(**data)


@dataclass
class ScaleResult:
    beta: float
    params: Params
    report: InitReport


@dataclass
class LambdaStarEstimate:
    value: float
    samples: int
    standard_error: float


@dataclass
class TrainConfig:
    """Full-batch gradient descent settings."""

    eta: float
    epochs: int
    forward_opts: SolveOptions = field(default_factory=SolveOptions.precise)
    adjoint_opts: SolveOptions = field(default_factory=SolveOptions.precise)
    monitor_spectral: bool = True
    monitor_every: int = 1
    seed: int = 0
    mode: str = "strict"
    gradient_flow: bool = False

    def __post_init__(self) -> None:
        # eta = 0 is accepted as the frozen-parameter control run.
        if self.eta < 0:
            raise ContractViolation(f"eta must be nonnegative, got {self.eta}")
        if int(self.epochs) < 1:
            raise ContractViolation(f"epochs must be >= 1, got {self.epochs}")
        if int(self.monitor_every) < 1:
            raise ContractViolation(f"monitor_every must be >= 1, got {self.monitor_every}")
        if self.mode not in ("strict", "experiment"):
            raise ContractViolation(f"mode must be 'strict' or 'experiment', got {self.mode!r}")

    @property
    def strict(self) -> bool:
        return self.mode == "strict"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainRow:
    epoch: int
    train_loss: float
    test_loss: Optional[float]
    A_opnorm: float
    gammaA_opnorm: float
    sigma_min_Z: Optional[float]
    forward_iters: int
    adjoint_iters: int
    rate_envelope: float
    W_opnorm: float = 0.0
    b_norm: float = 0.0
    forward_converged: bool = True
    flow_envelope: Optional[float] = None

    def csv_values(self) -> Dict[str, Any]:
        return {column: getattr(self, column) for column in CSV_COLUMNS}


@dataclass
class TrainLog:
    config: Dict[str, Any]
    init_report: Optional[InitReport] = None
    rows: List[TrainRow] = field(default_factory=list)
    iteration_history: List[Tuple[int, int]] = field(default_factory=list)
    notes: Dict[str, Any] = field(default_factory=dict)

    @property
    def header(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "init_report": self.init_report.to_dict() if self.init_report else None,
            "notes": self.notes,
        }

    def avg_forward_iters(self) -> float:
        if not self.iteration_history:
            return 0.0
        return float(np.mean([forward for forward, _ in self.iteration_history]))

    def max_gammaA_opnorm(self) -> float:
        if not self.rows:
            return 0.0
        return max(row.gammaA_opnorm for row in self.rows)


@dataclass
class TrainResult:
    final: Params
    log: TrainLog


@dataclass
class Violation:
    epoch: int
    quantity: str
    observed: float
    bound: float


@dataclass
class SweepSummary:
    axis: str
    value: float
    avg_forward_iters: Optional[float] = None
    final_train_loss: Optional[float] = None
    final_test_loss: Optional[float] = None
    max_gammaA_opnorm: Optional[float] = None
    status: str = "ok"
    error: Optional[str] = None
    log: Optional[TrainLog] = None


@dataclass
class RawImages:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )


@dataclass
class FdOptions:
    step: float = 1e-6
    kink_margin: float = 1e-4

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ContractViolation(f"step must be positive, got {self.step}")
        if self.kink_margin < 0:
            raise ContractViolation(f"kink_margin must be nonnegative, got {self.kink_margin}")


@dataclass
class GradCheckReport:
    """Max relative Frobenius error per gradient block for every oracle pair."""

    errors: Dict[str, Dict[str, float]]
    block_norms: Dict[str, Dict[str, float]]
    tolerance: float
    passed: bool

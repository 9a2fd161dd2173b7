from __future__ import annotations

from typing import Any, Optional


class ImplicitEqError(RuntimeError):
    """Base class for every error raised by the implicit equilibrium package."""


class ConfigurationError(ImplicitEqError):
    """Raised when a run configuration is missing, malformed or inconsistent."""


class ContractViolation(ImplicitEqError, ValueError):
    """An input breaks a documented precondition."""


class ShapeMismatch(ContractViolation):
    """Array dimensions do not conform."""


class ShapeError(ShapeMismatch):
    """Matrix has more rows than columns where the overparameterized regime is required."""


class NonContractive(ImplicitEqError):
    """gamma * ||A|| >= 1, so the fixed-point map is not a contraction."""

    def __init__(self, message: str, gamma_norm: Optional[float] = None):
        super().__init__(message)
        self.gamma_norm = gamma_norm


class NotConverged(ImplicitEqError):
    """Iteration cap reached with residual above tolerance; carries the flagged state."""

    def __init__(self, message: str, state: Any = None):
        super().__init__(message)
        self.state = state


class UnconvergedAdjoint(NotConverged):
    """Gradients requested from an adjoint state that did not converge."""


class NegativeEntries(ContractViolation):
    """The closed-form equilibrium requires an entrywise nonnegative A."""


class SingularSystem(ImplicitEqError):
    """Dense linear solve failed."""


class TooLarge(ImplicitEqError):
    """Dense assembly requested above the desk-scale limit."""


class GammaTooLarge(ImplicitEqError):
    """gamma * lambda2 >= 1: the convergence conditions cannot be evaluated."""


class WidthTooSmall(ContractViolation):
    """Width m is smaller than the sample count N."""


class DegenerateFeatures(ImplicitEqError):
    """sigma_min of the initial feature matrix is zero; no scaling can help."""


class BetaCapExceeded(ImplicitEqError):
    """Doubling search for the scale factor passed its cap."""


class StepSizeRejected(ImplicitEqError):
    """Step size exceeds the certified bound in strict mode."""


class TrainingHalted(NonContractive):
    """Strict-mode training stopped because gamma * ||A(k)|| reached 1."""

    def __init__(self, message: str, epoch: int, gamma_norm: float, log: Any = None):
        super().__init__(message, gamma_norm=gamma_norm)
        self.epoch = epoch
        self.log = log


class KinkProximity(ImplicitEqError):
    """A pre-activation lies within the kink margin; resample the instance."""


class IdxFormatError(ImplicitEqError, ValueError):
    """Malformed IDX file."""


class BadMagic(IdxFormatError):
    pass


class TruncatedFile(IdxFormatError):
    pass


class UnsupportedTypeCode(IdxFormatError):
    pass


class InsufficientClassSamples(ContractViolation):
    """A requested class has fewer samples than asked for."""


class ZeroRow(ContractViolation):
    """Row normalisation hit an all-zero row."""

"""
ReLU implicit equilibrium networks with certified gradient-descent training.

The package exposes the forward equilibrium solve, the implicit gradients
and the trainer as its main entry points.
"""

try:  # pragma: no cover - support both package and script execution
    from .equilibrium import solve_forward
    from .implicit_grad import loss_and_gradients
    from .trainer import train
except ImportError:  # pragma: no cover - script mode fallback
    from equilibrium import solve_forward  # type: ignore
    from implicit_grad import loss_and_gradients  # type: ignore
    from trainer import train  # type: ignore

__all__ = ["loss_and_gradients", "solve_forward", "train"]

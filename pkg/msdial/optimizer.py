"""Adadelta optimizer."""
from __future__ import annotations
from typing import Iterable

import numpy as np

from msdial._tensor import Tensor
from msdial.exceptions import GraphError

RHO = 0.9
EPS = 1e-6
LEARNING_RATE = 1.0


class AdadeltaState:
    """Running averages of squared gradients and squared updates.

    Args:
        shapes: Parameters shapes.
        rho: Decay.
        eps: Stabilizer.
        lr: Learning-rate multiplier.
    """

    __slots__ = ["square_avg", "acc_delta", "rho", "eps", "lr"]

    def __init__(
        self,
        shapes: Iterable[tuple[int, ...]],
        rho: float = RHO,
        eps: float = EPS,
        lr: float = LEARNING_RATE,
    ) -> None:
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"Rho must be in [0, 1), got {rho}")
        elif eps <= 0.0:
            raise ValueError(f"Eps must be positive, got {eps}")
        shapes = list(shapes)
        self.square_avg = [np.zeros(shape) for shape in shapes]
        self.acc_delta = [np.zeros(shape) for shape in shapes]
        self.rho = rho
        self.eps = eps
        self.lr = lr


def step(params: list[Tensor], state: AdadeltaState) -> None:
    """Update parameters from their gradients, then clear the gradients.

    Args:
        params: Registered parameters, all with a gradient.
        state: Optimizer state, aligned with `params`.
    """
    for index, param in enumerate(params):
        if param.grad is None:
            raise GraphError(f"Parameter {index} {param.shape} has no gradient")
    rho, eps = state.rho, state.eps
    for param, square_avg, acc_delta in zip(params, state.square_avg, state.acc_delta):
        grad = param.grad
        square_avg *= rho
        square_avg += (1.0 - rho) * grad * grad  # type: ignore
        delta = -(np.sqrt(acc_delta + eps) / np.sqrt(square_avg + eps)) * grad
        acc_delta *= rho
        acc_delta += (1.0 - rho) * delta * delta
        param.data += state.lr * delta
        param.zero_grad()


class Adadelta:
    """Adadelta optimizer over a fixed parameter set.

    Args:
        params: Parameters.
        rho: Decay.
        eps: Stabilizer.
        lr: Learning-rate multiplier.
    """

    __slots__ = ["params", "state"]

    def __init__(
        self,
        params: Iterable[Tensor],
        rho: float = RHO,
        eps: float = EPS,
        lr: float = LEARNING_RATE,
    ) -> None:
        self.params = list(params)
        self.state = AdadeltaState((p.shape for p in self.params), rho, eps, lr)

    def step(self) -> None:
        """Update parameters and clear their gradients."""
        step(self.params, self.state)

    def zero_grad(self) -> None:
        """Clear parameters gradients."""
        for param in self.params:
            param.zero_grad()

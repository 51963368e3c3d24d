"""Finite-difference gradient check."""
from __future__ import annotations
from typing import Callable

import numpy as np

from msdial._tensor import Tape, Tensor, TensorLike, as_tensor, backward, no_grad


class GradCheckReport:
    """Comparison of tape gradients with central finite differences."""

    __slots__ = ["max_rel_err", "worst_index", "non_comparable", "non_finite"]

    def __init__(
        self,
        max_rel_err: float,
        worst_index: tuple[int, ...] | None,
        non_comparable: tuple[tuple[int, ...], ...],
        non_finite: tuple[tuple[int, ...], ...],
    ) -> None:
        self.max_rel_err = max_rel_err
        self.worst_index = worst_index
        self.non_comparable = non_comparable
        self.non_finite = non_finite

    def __repr__(self) -> str:
        return (
            f"GradCheckReport(max_rel_err={self.max_rel_err:.3e}, "
            f"worst_index={self.worst_index}, "
            f"non_comparable={len(self.non_comparable)}, "
            f"non_finite={len(self.non_finite)})"
        )

    @property
    def has_nan(self) -> bool:
        """If True, the function or its gradient was not finite somewhere.

        Returns:
            Boolean.
        """
        return bool(self.non_finite)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: TensorLike,
    h: float = 1e-5,
    *,
    floor: float = 1e-3,
    kink_tol: float = 1e-2,
) -> GradCheckReport:
    """Compare the tape gradient of a scalar function with central differences.

    Coordinates where the one-sided differences disagree are reported as
    non-comparable (non-differentiable point such as a ReLU kink) and excluded
    from the error.

    Args:
        f: Deterministic scalar function.
        x: Evaluation point.
        h: Finite difference step.
        floor: Lower bound of the relative error denominator.
        kink_tol: One-sided differences relative disagreement flagging a kink.

    Returns:
        Report.
    """
    origin = as_tensor(x).data.copy()
    leaf = Tensor(origin, requires_grad=True)
    with Tape():
        root = f(leaf)
        backward(root)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(origin)

    def evaluate(point: np.ndarray) -> float:
        with no_grad():
            return as_tensor(f(Tensor(point))).item()

    center = evaluate(origin)
    max_rel_err = 0.0
    worst: tuple[int, ...] | None = None
    non_comparable = []
    non_finite = []
    for index in np.ndindex(*origin.shape):
        point = origin.copy()
        point[index] += h
        plus = evaluate(point)
        point[index] = origin[index] - h
        minus = evaluate(point)

        numeric = (plus - minus) / (2.0 * h)
        tape_value = float(analytic[index])
        if not np.isfinite([numeric, tape_value, center]).all():
            non_finite.append(index)
            continue

        forward_diff = (plus - center) / h
        backward_diff = (center - minus) / h
        if abs(forward_diff - backward_diff) > kink_tol * max(
            1.0, abs(forward_diff), abs(backward_diff)
        ):
            non_comparable.append(index)
            continue

        rel_err = abs(tape_value - numeric) / max(abs(tape_value), abs(numeric), floor)
        if worst is None or rel_err > max_rel_err:
            max_rel_err = rel_err
            worst = index

    return GradCheckReport(max_rel_err, worst, tuple(non_comparable), tuple(non_finite))

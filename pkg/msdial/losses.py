"""Losses.

Source classification loss, target entropy and their weighted combination.
"""
from __future__ import annotations
from typing import Literal, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from msdial._tensor import (
    Tensor,
    TensorLike,
    add,
    as_tensor,
    clamp_min,
    exp,
    log,
    mul,
    neg,
    tensor_sum,
)
from msdial.exceptions import DomainError, ShapeError

Reduction = Literal["sum", "mean"]

# Operating entropy weight
DEFAULT_LAMBDA = 0.001

# Probabilities floor inside the entropy, so that 0 log 0 = 0
PROBABILITY_FLOOR = 1e-12


class LossConfig(BaseModel):
    """Loss weighting and reductions."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    lambda_: float = Field(DEFAULT_LAMBDA, ge=0.0, alias="lambda")
    source_reduction: Reduction = "mean"
    target_reduction: Reduction = "mean"


def _reduce(total: Tensor, rows: int, reduction: Reduction) -> Tensor:
    """Apply a reduction to a summed loss.

    Args:
        total: Sum over rows.
        rows: Row count.
        reduction: "sum" or "mean".

    Returns:
        Scalar.
    """
    if reduction == "sum":
        return total
    elif reduction == "mean":
        return mul(total, 1.0 / rows) if rows else total
    raise ValueError(f"Unsupported reduction: {reduction}")


def source_ce(
    log_probs: TensorLike, labels: ArrayLike, reduction: Reduction = "mean"
) -> Tensor:
    """Cross-entropy of source predictions.

    Args:
        log_probs: Log-probabilities [N x C].
        labels: Class indices [N].
        reduction: "sum" or "mean".

    Returns:
        Scalar.
    """
    log_probs = as_tensor(log_probs)
    labels = np.asarray(labels)
    if log_probs.ndim != 2 or labels.shape != (log_probs.shape[0],):
        raise ShapeError(
            "Labels do not match log-probabilities", labels.shape, log_probs.shape
        )
    rows, classes = log_probs.shape
    if labels.size and (
        not np.issubdtype(labels.dtype, np.integer)
        or labels.min() < 0
        or labels.max() >= classes
    ):
        raise DomainError(f"Labels must be integers in [0, {classes})")
    one_hot = np.zeros(log_probs.shape)
    one_hot[np.arange(rows), labels] = 1.0
    return _reduce(neg(tensor_sum(mul(log_probs, one_hot))), rows, reduction)


def target_entropy(log_probs: TensorLike, reduction: Reduction = "mean") -> Tensor:
    """Shannon entropy of target predictions.

    Args:
        log_probs: Log-probabilities [N x C].
        reduction: "sum" or "mean".

    Returns:
        Scalar.
    """
    log_probs = as_tensor(log_probs)
    if log_probs.ndim != 2:
        raise ShapeError("Entropy requires [N x C] log-probabilities", log_probs.shape)
    probs = exp(log_probs)
    plogp = mul(probs, log(clamp_min(probs, PROBABILITY_FLOOR)))
    return _reduce(neg(tensor_sum(plogp)), log_probs.shape[0], reduction)


def total_loss(
    ls: TensorLike, lt: TensorLike, cfg: Union[LossConfig, TensorLike]
) -> Tensor:
    """Source loss plus the weighted target entropy.

    Args:
        ls: Source loss.
        lt: Target entropy.
        cfg: Loss configuration, or the entropy weight itself.

    Returns:
        Scalar.
    """
    weight = cfg.lambda_ if isinstance(cfg, LossConfig) else cfg
    return add(ls, mul(weight, lt))


__all__ = (
    "DEFAULT_LAMBDA",
    "LossConfig",
    "source_ce",
    "target_entropy",
    "total_loss",
)

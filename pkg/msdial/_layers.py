"""Layers."""
from __future__ import annotations
from abc import ABC, abstractmethod
from copy import deepcopy
from typing import Iterable, Iterator, Literal, Sequence, Union

import numpy as np

from msdial._tensor import (
    DTYPE,
    Tensor,
    TensorLike,
    as_tensor,
    channel_axes,
    conv2d,
    matmul,
    mul,
    relu,
    reshape,
    segment_normalize,
    sub,
    add,
)
from msdial.exceptions import GraphError, SegmentError, ShapeError

Mode = Literal["train", "eval"]

EPS = 1e-5
MOMENTUM = 0.1

# Dropout rates
CONV_DROPOUT = 0.2
FC_DROPOUT = 0.5


class Segment:
    """Contiguous rows of a batch belonging to one domain."""

    __slots__ = ["domain_id", "start", "count"]

    def __init__(self, domain_id: int, start: int, count: int) -> None:
        self.domain_id = domain_id
        self.start = start
        self.count = count

    def __repr__(self) -> str:
        return (
            f"Segment(domain_id={self.domain_id}, start={self.start}, "
            f"count={self.count})"
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Segment) and (
            (self.domain_id, self.start, self.count)
            == (other.domain_id, other.start, other.count)
        )

    @property
    def stop(self) -> int:
        """Row after the last segment row.

        Returns:
            Row index.
        """
        return self.start + self.count


class DomainSegments:
    """Partition of a batch leading axis into per-domain segments.

    Segments are contiguous, cover all rows from row 0 and appear in increasing
    domain order (sources by index, target last).

    Args:
        segments: (domain_id, start_row, row_count) triples.
    """

    __slots__ = ["_segments"]

    def __init__(self, segments: Iterable[tuple[int, int, int]]) -> None:
        self._segments = tuple(Segment(*segment) for segment in segments)
        if not self._segments:
            raise SegmentError("At least one domain segment is required")
        row = 0
        previous_id = -1
        for segment in self._segments:
            if segment.start != row or segment.count < 0:
                raise SegmentError(
                    f"Segments must be contiguous from row 0, got {self._segments}"
                )
            elif segment.domain_id <= previous_id:
                raise SegmentError(
                    "Segments must appear in increasing domain order, "
                    f"got {self._segments}"
                )
            row = segment.stop
            previous_id = segment.domain_id

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "DomainSegments":
        """Segments of domains 0..len(counts)-1 with the given row counts.

        Args:
            counts: Rows per domain.

        Returns:
            Segments.
        """
        starts = np.concatenate(([0], np.cumsum(counts)[:-1])) if counts else []
        return cls(
            (domain_id, int(start), int(count))
            for domain_id, (start, count) in enumerate(zip(starts, counts))
        )

    @classmethod
    def single(cls, rows: int, domain_id: int = 0) -> "DomainSegments":
        """Single domain segment.

        Args:
            rows: Batch rows.
            domain_id: Domain.

        Returns:
            Segments.
        """
        return cls(((domain_id, 0, rows),))

    def __iter__(self) -> Iterator[Segment]:
        return iter(self._segments)

    def __len__(self) -> int:
        return len(self._segments)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DomainSegments) and self._segments == other._segments

    def __repr__(self) -> str:
        triples = [(s.domain_id, s.start, s.count) for s in self._segments]
        return f"DomainSegments({triples})"

    @property
    def rows(self) -> int:
        """Number of covered rows.

        Returns:
            Rows.
        """
        return self._segments[-1].stop

    @property
    def domain_ids(self) -> tuple[int, ...]:
        """Domains, in segment order.

        Returns:
            Domain IDs.
        """
        return tuple(segment.domain_id for segment in self._segments)

    def bounds(self) -> list[tuple[int, int]]:
        """Row ranges.

        Returns:
            (start, stop) pairs.
        """
        return [(segment.start, segment.stop) for segment in self._segments]


class BatchNormState:
    """Per-channel normalization statistics, with an optional affine pair.

    Args:
        channels: Channel count.
        affine: If False, no scale and shift parameters.
        momentum: Running statistics update weight.
        eps: Variance stabilizer.
    """

    __slots__ = [
        "gamma",
        "beta",
        "running_mean",
        "running_var",
        "momentum",
        "eps",
        "num_batches_seen",
    ]

    def __init__(
        self,
        channels: int,
        *,
        affine: bool = True,
        momentum: float = MOMENTUM,
        eps: float = EPS,
    ) -> None:
        if not 0.0 < momentum <= 1.0:
            raise ValueError(f"Momentum must be in (0, 1], got {momentum}")
        elif eps <= 0.0:
            raise ValueError(f"Eps must be positive, got {eps}")
        self.gamma = Tensor(np.ones(channels), requires_grad=True) if affine else None
        self.beta = Tensor(np.zeros(channels), requires_grad=True) if affine else None
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps
        self.num_batches_seen = 0

    @property
    def channels(self) -> int:
        """Channel count.

        Returns:
            Channels.
        """
        return len(self.running_mean)

    def update(self, mean: np.ndarray, unbiased_var: np.ndarray) -> None:
        """Move running statistics toward batch statistics.

        Args:
            mean: Batch mean.
            unbiased_var: Batch variance with Bessel correction.
        """
        momentum = self.momentum
        self.running_mean = (1.0 - momentum) * self.running_mean + momentum * mean
        self.running_var = (1.0 - momentum) * self.running_var + momentum * unbiased_var
        self.num_batches_seen += 1


def _check_channels(x: Tensor, channels: int) -> None:
    """Check the channel axis.

    Args:
        x: Input [N x C] or [N x C x H x W].
        channels: Expected channels.
    """
    channel_axes(x.ndim)
    if x.shape[1] != channels:
        raise ShapeError(f"Expected {channels} channels", x.shape)


def _per_channel(values: TensorLike, ndim: int) -> Tensor:
    """Reshape a per-channel vector for broadcasting on channel axis 1.

    Args:
        values: Per-channel vector.
        ndim: Number of axes of the broadcast target.

    Returns:
        Tensor.
    """
    values = as_tensor(values)
    shape = (1, -1) if ndim == 2 else (1, -1, 1, 1)
    return reshape(values, shape)


def _affine(x: Tensor, gamma: Tensor | None, beta: Tensor | None) -> Tensor:
    """Apply a per-channel scale and shift.

    Args:
        x: Normalized input.
        gamma: Scale.
        beta: Shift.

    Returns:
        Tensor.
    """
    if gamma is None or beta is None:
        return x
    return add(mul(x, _per_channel(gamma, x.ndim)), _per_channel(beta, x.ndim))


def _normalize_running(x: Tensor, state: BatchNormState) -> Tensor:
    """Normalize with running statistics.

    Args:
        x: Input.
        state: Statistics.

    Returns:
        Tensor.
    """
    inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
    return mul(
        sub(x, _per_channel(state.running_mean, x.ndim)),
        _per_channel(inv_std, x.ndim),
    )


def _normalize_segments(
    x: Tensor, segments: DomainSegments, states: Sequence[BatchNormState]
) -> Tensor:
    """Normalize each segment with its own batch statistics and update its state.

    Args:
        x: Input.
        segments: Row segments, one state per segment.
        states: Statistics to update.

    Returns:
        Tensor, without affine transform.
    """
    if segments.rows != x.shape[0]:
        raise SegmentError(
            f"Segments cover {segments.rows} rows, batch has {x.shape[0]}"
        )
    for segment in segments:
        if segment.count < 2:
            raise SegmentError(
                f"Domain {segment.domain_id} segment has {segment.count} rows, "
                "at least 2 are required"
            )
    normalized, statistics = segment_normalize(x, segments.bounds(), states[0].eps)
    for state, stats in zip(states, statistics):
        state.update(stats.mean, stats.unbiased_var)
    return normalized


def bn_forward(x: TensorLike, state: BatchNormState, mode: Mode) -> Tensor:
    """Batch normalization.

    Args:
        x: Input [N x C] or [N x C x H x W].
        state: Normalization state.
        mode: "train" normalizes with batch statistics and updates running
            statistics, "eval" normalizes with running statistics.

    Returns:
        Tensor.
    """
    x = as_tensor(x)
    _check_channels(x, state.channels)
    if mode == "train":
        normalized = _normalize_segments(x, DomainSegments.single(x.shape[0]), (state,))
    else:
        normalized = _normalize_running(x, state)
    return _affine(normalized, state.gamma, state.beta)


class DialLayer:
    """Domain alignment layer.

    Each domain is standardized with its own statistics, then one affine
    transform shared by all domains is applied.

    Args:
        channels: Channel count.
        domain_count: Number of domains (sources plus target).
        momentum: Running statistics update weight.
        eps: Variance stabilizer.
    """

    __slots__ = ["per_domain", "shared_gamma", "shared_beta"]

    def __init__(
        self,
        channels: int,
        domain_count: int,
        *,
        momentum: float = MOMENTUM,
        eps: float = EPS,
    ) -> None:
        if domain_count < 1:
            raise SegmentError(f"At least one domain is required, got {domain_count}")
        self.per_domain = [
            BatchNormState(channels, affine=False, momentum=momentum, eps=eps)
            for _ in range(domain_count)
        ]
        self.shared_gamma = Tensor(np.ones(channels), requires_grad=True)
        self.shared_beta = Tensor(np.zeros(channels), requires_grad=True)

    @classmethod
    def from_batchnorm(cls, state: BatchNormState, domain_count: int) -> "DialLayer":
        """Domain alignment layer taking over a batch normalization layer.

        Affine parameters are copied, statistics start fresh.

        Args:
            state: Batch normalization state.
            domain_count: Number of domains.

        Returns:
            Layer.
        """
        layer = cls(
            state.channels, domain_count, momentum=state.momentum, eps=state.eps
        )
        if state.gamma is not None and state.beta is not None:
            layer.shared_gamma = Tensor(state.gamma.data, requires_grad=True)
            layer.shared_beta = Tensor(state.beta.data, requires_grad=True)
        return layer

    @property
    def domain_count(self) -> int:
        """Number of domains.

        Returns:
            Domains.
        """
        return len(self.per_domain)

    @property
    def channels(self) -> int:
        """Channel count.

        Returns:
            Channels.
        """
        return len(self.shared_gamma.data)


def dial_forward_train(
    x: TensorLike, segments: DomainSegments, layer: DialLayer
) -> Tensor:
    """Training forward of a domain alignment layer.

    Args:
        x: Batch with one segment per domain.
        segments: Row segments, covering every domain of the layer.
        layer: Layer.

    Returns:
        Tensor, in input row order.
    """
    x = as_tensor(x)
    _check_channels(x, layer.channels)
    if segments.domain_ids != tuple(range(layer.domain_count)):
        raise SegmentError(
            f"Expected one segment for each of the {layer.domain_count} domains, "
            f"got domains {segments.domain_ids}"
        )
    normalized = _normalize_segments(x, segments, layer.per_domain)
    return _affine(normalized, layer.shared_gamma, layer.shared_beta)


def dial_forward_eval(x: TensorLike, domain_id: int, layer: DialLayer) -> Tensor:
    """Inference forward of a domain alignment layer for samples of one domain.

    Args:
        x: Batch of one domain.
        domain_id: Domain.
        layer: Layer.

    Returns:
        Tensor.
    """
    x = as_tensor(x)
    _check_channels(x, layer.channels)
    if not 0 <= domain_id < layer.domain_count:
        raise SegmentError(
            f"Domain {domain_id} out of range [0, {layer.domain_count})"
        )
    state = layer.per_domain[domain_id]
    if not state.num_batches_seen:
        raise SegmentError(f"Domain {domain_id} has no accumulated statistics")
    return _affine(
        _normalize_running(x, state), layer.shared_gamma, layer.shared_beta
    )


def dropout_forward(
    x: TensorLike, p: float, mode: Mode, rng: np.random.Generator | None = None
) -> Tensor:
    """Inverted dropout.

    Args:
        x: Input.
        p: Drop probability in [0, 1).
        mode: In "eval" mode, identity.
        rng: Random generator, required to drop in "train" mode.

    Returns:
        Tensor.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"Dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if mode == "eval" or p == 0.0:
        return x
    elif rng is None:
        raise GraphError("Dropout in train mode requires a random generator")
    keep = rng.random(x.shape) >= p
    return mul(x, keep / (1.0 - p))


Route = Union[DomainSegments, int]


class Context:
    """Forward pass routing.

    Args:
        mode: "train" or "eval".
        route: Segments in train mode, domain ID in eval mode.
        rng: Random generator for dropout.
    """

    __slots__ = ["mode", "segments", "domain_id", "rng"]

    def __init__(
        self, mode: Mode, route: Route, rng: np.random.Generator | None = None
    ) -> None:
        if mode == "train":
            if not isinstance(route, DomainSegments):
                raise SegmentError("Train mode requires domain segments")
            self.segments: DomainSegments | None = route
            self.domain_id: int | None = None
        elif mode == "eval":
            if isinstance(route, DomainSegments):
                raise SegmentError("Eval mode requires a single domain ID")
            self.segments = None
            self.domain_id = int(route)
        else:
            raise ValueError(f"Unsupported mode: {mode}")
        self.mode: Mode = mode
        self.rng = rng


def glorot_uniform(
    shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform initialization in +/- sqrt(6 / (fan_in + fan_out)).

    Args:
        shape: Shape.
        fan_in: Input units.
        fan_out: Output units.
        rng: Random generator.

    Returns:
        Array.
    """
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer(ABC):
    """Graph layer."""

    __slots__ = ()

    kind: str = ""

    @abstractmethod
    def forward(self, x: Tensor, context: Context) -> Tensor:
        """Forward pass.

        Args:
            x: Input.
            context: Routing.

        Returns:
            Output.
        """

    def parameters(self) -> list[Tensor]:
        """Learned parameters.

        Returns:
            Tensors.
        """
        return []

    @abstractmethod
    def describe(self) -> str:
        """Single line description.

        Returns:
            Description.
        """

    def copy(self) -> "Layer":
        """Independent copy.

        Returns:
            Layer.
        """
        return deepcopy(self)


class Linear(Layer):
    """Fully-connected layer."""

    __slots__ = ["weight", "bias"]

    kind = "fc"

    def __init__(
        self, in_features: int, out_features: int, rng: np.random.Generator
    ) -> None:
        self.weight = Tensor(
            glorot_uniform((in_features, out_features), in_features, out_features, rng),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    @property
    def in_features(self) -> int:
        """Input width.

        Returns:
            Width.
        """
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        """Output width.

        Returns:
            Width.
        """
        return self.weight.shape[1]

    def forward(self, x: Tensor, context: Context) -> Tensor:
        return add(matmul(x, self.weight), reshape(self.bias, (1, -1)))

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def describe(self) -> str:
        return f"fc in={self.in_features} out={self.out_features}"


class Conv2d(Layer):
    """Convolutional layer."""

    __slots__ = ["weight", "bias", "stride", "padding"]

    kind = "conv"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        *,
        stride: int = 1,
        padding: int = 0,
    ) -> None:
        area = kernel * kernel
        self.weight = Tensor(
            glorot_uniform(
                (out_channels, in_channels, kernel, kernel),
                in_channels * area,
                out_channels * area,
                rng,
            ),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        self.stride = stride
        self.padding = padding

    @property
    def out_channels(self) -> int:
        """Output channels.

        Returns:
            Channels.
        """
        return self.weight.shape[0]

    def output_size(self, size: int) -> int:
        """Output spatial extent.

        Args:
            size: Input spatial extent.

        Returns:
            Extent.
        """
        return (size + 2 * self.padding - self.weight.shape[2]) // self.stride + 1

    def forward(self, x: Tensor, context: Context) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def describe(self) -> str:
        out_channels, in_channels, kernel, _ = self.weight.shape
        return (
            f"conv in={in_channels} out={out_channels} kernel={kernel} "
            f"stride={self.stride} pad={self.padding}"
        )


class ReLU(Layer):
    """ReLU activation."""

    __slots__ = ()

    kind = "relu"

    def forward(self, x: Tensor, context: Context) -> Tensor:
        return relu(x)

    def describe(self) -> str:
        return "relu"


class Flatten(Layer):
    """Flatten all axes but the first."""

    __slots__ = ()

    kind = "flatten"

    def forward(self, x: Tensor, context: Context) -> Tensor:
        return reshape(x, (x.shape[0], -1))

    def describe(self) -> str:
        return "flatten"


class Dropout(Layer):
    """Dropout."""

    __slots__ = ["p"]

    kind = "dropout"

    def __init__(self, p: float) -> None:
        if not 0.0 <= p < 1.0:
            raise ValueError(f"Dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x: Tensor, context: Context) -> Tensor:
        return dropout_forward(x, self.p, context.mode, context.rng)

    def describe(self) -> str:
        return f"dropout p={self.p:g}"


class BatchNorm(Layer):
    """Batch normalization layer."""

    __slots__ = ["state"]

    kind = "batchnorm"

    def __init__(self, channels: int, **kwargs: float) -> None:
        self.state = BatchNormState(channels, **kwargs)  # type: ignore

    def forward(self, x: Tensor, context: Context) -> Tensor:
        return bn_forward(x, self.state, context.mode)

    def parameters(self) -> list[Tensor]:
        if self.state.gamma is None or self.state.beta is None:
            return []
        return [self.state.gamma, self.state.beta]

    def describe(self) -> str:
        return f"batchnorm channels={self.state.channels}"


class Dial(Layer):
    """Domain alignment layer node."""

    __slots__ = ["layer"]

    kind = "dial"

    def __init__(self, layer: DialLayer) -> None:
        self.layer = layer

    def forward(self, x: Tensor, context: Context) -> Tensor:
        if context.segments is not None:
            return dial_forward_train(x, context.segments, self.layer)
        return dial_forward_eval(x, context.domain_id, self.layer)  # type: ignore

    def parameters(self) -> list[Tensor]:
        return [self.layer.shared_gamma, self.layer.shared_beta]

    def describe(self) -> str:
        return f"dial channels={self.layer.channels} domains={self.layer.domain_count}"

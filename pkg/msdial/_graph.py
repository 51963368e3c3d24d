"""Model graph, reference architectures and domain alignment layers insertion."""
from __future__ import annotations
from copy import deepcopy
from typing import Iterator, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from msdial._layers import (
    CONV_DROPOUT,
    FC_DROPOUT,
    BatchNorm,
    Context,
    Conv2d,
    Dial,
    DialLayer,
    Dropout,
    Flatten,
    Layer,
    Linear,
    Mode,
    ReLU,
    Route,
)
from msdial._tensor import Tensor, TensorLike, as_tensor
from msdial.exceptions import GraphError

Task = Literal["digits", "features"]

# Digit model feature extractor: (out_channels, kernel, stride, padding)
DIGIT_CONVS = ((64, 5, 2, 2), (64, 5, 2, 2), (128, 5, 2, 2))
DIGIT_HIDDEN = (2048, 1024)

FEATURE_WIDTH = 2048
FEATURE_HIDDEN = (1000, 500, 100)


class ArchitectureSpec(BaseModel):
    """Reference architecture parameters.

    `alignment_*` fields describe the alignment branches of adversarial methods;
    they are informative only and no branch is built.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    task: Task
    classes: int = Field(ge=2)
    sources: int = Field(ge=1)
    hidden: Optional[tuple[int, ...]] = None
    input_width: int = Field(FEATURE_WIDTH, ge=1)
    in_channels: int = Field(3, ge=1)
    image_size: int = Field(32, ge=1)
    dropout_conv: float = Field(CONV_DROPOUT, ge=0.0, lt=1.0)
    dropout_fc: float = Field(FC_DROPOUT, ge=0.0, lt=1.0)
    alignment_branches: int = Field(0, ge=0)
    alignment_hidden: int = Field(0, ge=0)
    alignment_outputs: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_hidden(self) -> "ArchitectureSpec":
        if self.hidden is not None and (
            not self.hidden or any(width < 1 for width in self.hidden)
        ):
            raise ValueError(f"Invalid hidden widths: {self.hidden}")
        return self

    @property
    def domain_count(self) -> int:
        """Number of domains, sources plus target.

        Returns:
            Domains.
        """
        return self.sources + 1


class LayerNode:
    """Graph node."""

    __slots__ = ["layer", "is_final_classifier"]

    def __init__(self, layer: Layer, is_final_classifier: bool = False) -> None:
        self.layer = layer
        self.is_final_classifier = is_final_classifier

    @property
    def kind(self) -> str:
        """Layer kind.

        Returns:
            Kind.
        """
        return self.layer.kind

    def describe(self) -> str:
        """Single line description.

        Returns:
            Description.
        """
        line = self.layer.describe()
        return f"{line} final" if self.is_final_classifier else line


class ModelGraph:
    """Ordered layer nodes, feature extractor then classifier.

    Args:
        nodes: Nodes, exactly one being the final classifier.
        spec: Architecture parameters.
    """

    __slots__ = ["nodes", "spec"]

    def __init__(self, nodes: list[LayerNode], spec: ArchitectureSpec) -> None:
        finals = sum(node.is_final_classifier for node in nodes)
        if finals != 1:
            raise GraphError(f"Exactly one final classifier is required, got {finals}")
        self.nodes = nodes
        self.spec = spec

    def __iter__(self) -> Iterator[LayerNode]:
        return iter(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def classifier_index(self) -> int:
        """Index of the final classifier node.

        Returns:
            Index.
        """
        for index, node in enumerate(self.nodes):
            if node.is_final_classifier:
                return index
        raise GraphError("No final classifier")  # pragma: no cover

    def count(self, kind: str) -> int:
        """Number of nodes of a kind.

        Args:
            kind: Layer kind.

        Returns:
            Count.
        """
        return sum(node.kind == kind for node in self.nodes)

    def parameters(self) -> list[Tensor]:
        """Learned parameters, in node order.

        Returns:
            Tensors.
        """
        return [param for node in self.nodes for param in node.layer.parameters()]

    def parameter_count(self) -> int:
        """Number of learned scalars.

        Returns:
            Count.
        """
        return sum(param.size for param in self.parameters())

    def describe(self) -> str:
        """Text description, one node per line.

        Returns:
            Description.
        """
        return "".join(f"{node.describe()}\n" for node in self.nodes)

    def copy(self) -> "ModelGraph":
        """Independent copy, parameters and statistics included.

        Returns:
            Model graph.
        """
        return deepcopy(self)

    def forward(
        self,
        batch: TensorLike,
        route: Route,
        mode: Mode = "eval",
        rng: np.random.Generator | None = None,
        *,
        stop: int | None = None,
    ) -> Tensor:
        """Forward pass.

        Args:
            batch: Input batch.
            route: Domain segments in "train" mode, domain ID in "eval" mode.
            mode: "train" or "eval".
            rng: Random generator for dropout.
            stop: If specified, returns the activations entering this node.

        Returns:
            Logits, or activations entering the `stop` node.
        """
        if stop is not None and not 0 <= stop <= len(self.nodes):
            raise GraphError(
                f"Invalid node boundary {stop}, graph has {len(self)} nodes"
            )
        context = Context(mode, route, rng)
        x = as_tensor(batch)
        for node in self.nodes[:stop]:
            x = node.layer.forward(x, context)
        return x


def _feature_node(layer: Layer, dropout: float, final: bool = False) -> list[LayerNode]:
    """Dropout, layer and ReLU nodes; the final classifier has neither dropout nor ReLU.

    Args:
        layer: Convolutional or fully-connected layer.
        dropout: Dropout probability.
        final: If True, final classifier.

    Returns:
        Nodes.
    """
    if final:
        return [LayerNode(layer, is_final_classifier=True)]
    return [LayerNode(Dropout(dropout)), LayerNode(layer), LayerNode(ReLU())]


def build_digit_model(spec: ArchitectureSpec, rng: np.random.Generator) -> ModelGraph:
    """Digit recognition network: three convolutions and three FC layers.

    Args:
        spec: Architecture, with task "digits".
        rng: Random generator for weights initialization.

    Returns:
        Model graph.
    """
    if spec.task != "digits":
        raise GraphError(f"Digit model requires the digits task, got {spec.task}")
    nodes: list[LayerNode] = []
    channels = spec.in_channels
    size = spec.image_size
    for out_channels, kernel, stride, padding in DIGIT_CONVS:
        conv = Conv2d(
            channels, out_channels, kernel, rng, stride=stride, padding=padding
        )
        nodes += _feature_node(conv, spec.dropout_conv)
        channels = out_channels
        size = conv.output_size(size)
    if size < 1:
        raise GraphError(f"Image size {spec.image_size} too small for the digit model")
    nodes.append(LayerNode(Flatten()))
    _classifier(nodes, channels * size * size, spec.hidden or DIGIT_HIDDEN, spec, rng)
    return ModelGraph(nodes, spec)


def build_feature_mlp(spec: ArchitectureSpec, rng: np.random.Generator) -> ModelGraph:
    """Pre-computed features network: three FC feature layers and a classifier.

    Args:
        spec: Architecture, with task "features".
        rng: Random generator for weights initialization.

    Returns:
        Model graph.
    """
    if spec.task != "features":
        raise GraphError(f"Feature model requires the features task, got {spec.task}")
    nodes: list[LayerNode] = []
    _classifier(nodes, spec.input_width, spec.hidden or FEATURE_HIDDEN, spec, rng)
    return ModelGraph(nodes, spec)


def _classifier(
    nodes: list[LayerNode],
    width: int,
    hidden: tuple[int, ...],
    spec: ArchitectureSpec,
    rng: np.random.Generator,
) -> None:
    """Append FC layers ending with the final classifier.

    Args:
        nodes: Nodes to extend.
        width: Input width.
        hidden: Hidden widths.
        spec: Architecture.
        rng: Random generator.
    """
    for out_width in hidden:
        nodes += _feature_node(Linear(width, out_width, rng), spec.dropout_fc)
        width = out_width
    nodes += _feature_node(Linear(width, spec.classes, rng), 0.0, final=True)


def build_model(spec: ArchitectureSpec, rng: np.random.Generator) -> ModelGraph:
    """Reference architecture of a task.

    Args:
        spec: Architecture.
        rng: Random generator.

    Returns:
        Model graph.
    """
    if spec.task == "digits":
        return build_digit_model(spec, rng)
    return build_feature_mlp(spec, rng)


def _channels(layer: Layer) -> int:
    """Output channels of a convolutional or FC layer.

    Args:
        layer: Layer.

    Returns:
        Channels.
    """
    if isinstance(layer, Conv2d):
        return layer.out_channels
    return layer.out_features  # type: ignore


def insert_ms_dial(model: ModelGraph, domain_count: int) -> ModelGraph:
    """Embed domain alignment layers into a model.

    Batch normalization layers, if any, are replaced and their affine parameters
    copied. Otherwise an alignment layer follows every convolutional and FC layer
    but the final classifier. Models already holding alignment layers are
    returned unchanged.

    Args:
        model: Model, left untouched.
        domain_count: Number of domains, sources plus target.

    Returns:
        New model graph.
    """
    if domain_count < 2:
        raise GraphError(
            f"Alignment layers require at least 2 domains, got {domain_count}; "
            "use batch normalization"
        )
    rewritten = model.copy()
    if rewritten.count("dial"):
        return rewritten

    nodes: list[LayerNode] = []
    if rewritten.count("batchnorm"):
        for node in rewritten.nodes:
            if isinstance(node.layer, BatchNorm):
                node = LayerNode(
                    Dial(DialLayer.from_batchnorm(node.layer.state, domain_count))
                )
            nodes.append(node)
    else:
        for node in rewritten.nodes:
            nodes.append(node)
            if node.kind in ("conv", "fc") and not node.is_final_classifier:
                nodes.append(
                    LayerNode(Dial(DialLayer(_channels(node.layer), domain_count)))
                )
    rewritten.nodes = nodes
    return rewritten

"""Pytest configuration."""
from __future__ import annotations
from json import loads
from pathlib import Path
from typing import Any

import numpy as np


def read_logs(out: str) -> list[dict[str, Any]]:
    """Parse JSON log lines.

    Args:
        out: Captured standard output.

    Returns:
        Log events.
    """
    return [loads(line) for line in out.splitlines() if line.startswith("{")]


def write_idx_pair(
    directory: Path, images: np.ndarray, labels: np.ndarray, name: str = "digits"
) -> tuple[Path, Path]:
    """Write IDX images and labels files.

    Args:
        directory: Output directory.
        images: Pixels [N x H x W].
        labels: Labels [N].
        name: Files prefix.

    Returns:
        Images path, labels path.
    """
    from msdial._data.idx import write

    images_path = directory / f"{name}-images.idx"
    labels_path = directory / f"{name}-labels.idx"
    write(images_path, images)
    write(labels_path, labels)
    return images_path, labels_path


def tiny_config(**kwargs: Any) -> Any:
    """Small synthetic experiment configuration.

    Args:
        kwargs: Fields overriding the defaults.

    Returns:
        ExperimentConfig.
    """
    from msdial.config import ExperimentConfig

    fields: dict[str, Any] = dict(
        synthetic=dict(
            domains=3, latent_dim=2, classes=2, samples=48, test_samples=40, seed=1
        ),
        target_name="domain2",
        epochs=2,
        replications=2,
        batch_size=12,
        hidden=(8,),
        seed=3,
    )
    fields.update(kwargs)
    return ExperimentConfig.model_validate(fields)


def benchmark_config(**kwargs: Any) -> Any:
    """Synthetic shift benchmark: 3 sources and 1 shifted target, 2 classes.

    Args:
        kwargs: Fields overriding the defaults.

    Returns:
        ExperimentConfig.
    """
    fields: dict[str, Any] = dict(
        synthetic=dict(
            domains=4, latent_dim=4, classes=2, samples=2000, test_samples=4000
        ),
        target_name="domain3",
        epochs=10,
        replications=5,
        batch_size=32,
        hidden=(64, 32),
        seed=0,
    )
    fields.update(kwargs)
    return tiny_config(**fields)


def feature_spec(**kwargs: Any) -> Any:
    """Small feature MLP architecture.

    Args:
        kwargs: Fields overriding the defaults.

    Returns:
        ArchitectureSpec.
    """
    from msdial._graph import ArchitectureSpec

    fields: dict[str, Any] = dict(
        task="features", classes=3, sources=2, input_width=5, hidden=(8, 4)
    )
    fields.update(kwargs)
    return ArchitectureSpec(**fields)


def batchnorm_model(rng: np.random.Generator) -> Any:
    """MLP with 4 batch normalization layers and random affine parameters.

    Args:
        rng: Random generator.

    Returns:
        ModelGraph.
    """
    from msdial._graph import LayerNode, ModelGraph
    from msdial._layers import BatchNorm, Linear, ReLU

    widths = (5, 6, 6, 4, 3)
    nodes = []
    for in_width, out_width in zip(widths, widths[1:]):
        bn = BatchNorm(out_width)
        bn.state.gamma.data[:] = rng.uniform(0.5, 2.0, out_width)  # type: ignore
        bn.state.beta.data[:] = rng.normal(size=out_width)  # type: ignore
        nodes += [
            LayerNode(Linear(in_width, out_width, rng)),
            LayerNode(bn),
            LayerNode(ReLU()),
        ]
    nodes.append(LayerNode(Linear(widths[-1], 2, rng), is_final_classifier=True))
    return ModelGraph(nodes, feature_spec(input_width=5, classes=2, hidden=None))

"""Result tables, feature export and 2-D projection."""
from __future__ import annotations
import csv
from os import PathLike, fspath
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from msdial._data import DomainDataset
from msdial._data.features import dump, load
from msdial._experiment import ResultRecord
from msdial._graph import ModelGraph
from msdial._training import predict
from msdial.exceptions import DataFormatError, GraphError, OutputError
from msdial.json import dumps

PathType = Union[str, "PathLike[str]"]

RESULT_COLUMNS = (
    "method",
    "target",
    "mean",
    "stderr",
    "replications",
    "lambda",
    "seed",
    "failed",
    "relative_gain",
)

AVERAGE = "average"

# Variance below which data is considered degenerate
RANK_TOLERANCE = 1e-12


def relative_gain(adapted: float, baseline: float) -> float:
    """Relative accuracy gain over a baseline.

    Args:
        adapted: Adapted method accuracy.
        baseline: Baseline accuracy.

    Returns:
        (adapted - baseline) / baseline.
    """
    if baseline == 0.0:
        raise ZeroDivisionError("Baseline accuracy is zero")
    return (adapted - baseline) / baseline


def format_gain(gain: float) -> str:
    """Percentage with explicit sign.

    Args:
        gain: Relative gain.

    Returns:
        Text like "+30.64%".
    """
    return f"{gain * 100.0:+.2f}%"


class _Row:
    """Result table row."""

    __slots__ = [
        "method",
        "target",
        "mean",
        "stderr",
        "replications",
        "lambda_",
        "seed",
        "failed",
    ]

    def __init__(
        self,
        method: str,
        target: str,
        mean: float,
        stderr: float,
        replications: int,
        lambda_: float,
        seed: int,
        failed: int,
    ) -> None:
        self.method = method
        self.target = target
        self.mean = mean
        self.stderr = stderr
        self.replications = replications
        self.lambda_ = lambda_
        self.seed = seed
        self.failed = failed

    @classmethod
    def from_record(cls, record: ResultRecord) -> "_Row":
        return cls(
            record.method,
            record.target_name,
            record.mean,
            record.standard_error,
            record.replications,
            record.lambda_,
            record.seed,
            len(record.failures),
        )

    @property
    def key(self) -> tuple[str, float, int]:
        return self.target, self.lambda_, self.seed


def _average_rows(rows: Sequence[_Row]) -> list[_Row]:
    """Per-method averages over targets.

    Args:
        rows: Per-target rows.

    Returns:
        Average rows, for methods run on more than one target.
    """
    groups: dict[tuple[str, float, int], list[_Row]] = {}
    for row in rows:
        groups.setdefault((row.method, row.lambda_, row.seed), []).append(row)
    averages = []
    for (method, lambda_, seed), group in groups.items():
        if len({row.target for row in group}) < 2:
            continue
        averages.append(
            _Row(
                method,
                AVERAGE,
                float(np.mean([row.mean for row in group])),
                float(np.sqrt(np.sum([row.stderr**2 for row in group]))) / len(group),
                sum(row.replications for row in group),
                lambda_,
                seed,
                sum(row.failed for row in group),
            )
        )
    return averages


def result_table(records: Iterable[ResultRecord]) -> list[dict[str, str]]:
    """Result rows, with per-target average rows and gains of "msdial" over "src".

    Args:
        records: Results.

    Returns:
        Rows of RESULT_COLUMNS values.
    """
    rows = [_Row.from_record(record) for record in records]
    rows += _average_rows(rows)
    baselines = {row.key: row.mean for row in rows if row.method == "src"}
    table = []
    for row in rows:
        gain = ""
        baseline = baselines.get(row.key)
        if row.method == "msdial" and baseline:
            gain = format_gain(relative_gain(row.mean, baseline))
        table.append(
            dict(
                method=row.method,
                target=row.target,
                mean=repr(row.mean),
                stderr=repr(row.stderr),
                replications=str(row.replications),
                seed=str(row.seed),
                failed=str(row.failed),
                relative_gain=gain,
                **{"lambda": repr(row.lambda_)},
            )
        )
    return table


def emit_results(records: Sequence[ResultRecord], path: PathType) -> None:
    """Write results as CSV, and a JSON summary next to it.

    Args:
        records: Results.
        path: CSV file path; the summary uses the ".json" suffix.
    """
    csv_path = Path(fspath(path))
    try:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "wt", newline="") as file:
            writer = csv.DictWriter(file, RESULT_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(result_table(records))
        csv_path.with_suffix(".json").write_text(
            dumps([record.to_dict() for record in records])
        )
    except OSError as exception:
        raise OutputError(f"Unable to write results: {exception}")


def export_features(
    model: ModelGraph,
    dataset: DomainDataset,
    layer_index: Optional[int],
    path: PathType,
    domain_id: Optional[int] = None,
) -> None:
    """Write the activations entering a node as a feature table.

    Args:
        model: Trained model.
        dataset: Dataset, its labels written along (ground truth for targets).
        layer_index: Node boundary, the final classifier if None.
        path: Feature table path.
        domain_id: Domain whose statistics route the alignment layers, the
            dataset domain if None.
    """
    stop = model.classifier_index if layer_index is None else layer_index
    if not 0 <= stop <= len(model):
        raise GraphError(f"Invalid node boundary {stop}, graph has {len(model)} nodes")
    domain_id = dataset.domain_id if domain_id is None else domain_id
    if len(dataset):
        activations = predict(model, dataset.samples, domain_id, stop=stop)
    else:
        blank = np.zeros((1, *dataset.samples.shape[1:]))
        activations = predict(model, blank, domain_id, stop=stop)[:0]
    width = int(np.prod(activations.shape[1:]))
    activations = activations.reshape(len(activations), width)
    try:
        with open(path, "wt") as file:
            dump(file, activations, dataset.labels)
    except OSError as exception:
        raise OutputError(f"Unable to write feature table: {exception}")


def pca_2d(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the two leading principal components.

    Component signs are fixed so that their largest coordinate is positive.

    Args:
        samples: Vectors [N x D], N >= 3.

    Returns:
        Coordinates [N x 2], the two leading covariance eigenvalues.
    """
    if samples.ndim != 2 or len(samples) < 3:
        raise DataFormatError(
            f"At least 3 vectors are required, got shape {samples.shape}"
        )
    centered = samples - samples.mean(axis=0)
    covariance = centered.T @ centered / (len(samples) - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1][:2]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    components = eigenvectors[:, order]
    if not eigenvalues.size or eigenvalues[0] <= RANK_TOLERANCE:
        raise DataFormatError("Degenerate data: all vectors are equal")
    for column in range(components.shape[1]):
        if components[np.argmax(np.abs(components[:, column])), column] < 0:
            components[:, column] *= -1.0
    coordinates = centered @ components
    if coordinates.shape[1] < 2:
        coordinates = np.hstack([coordinates, np.zeros((len(samples), 1))])
        eigenvalues = np.append(eigenvalues, 0.0)
    return coordinates, eigenvalues


def pca_project(table_path: PathType, out_path: PathType) -> np.ndarray:
    """Project a feature table to 2-D and write "x,y,label" CSV rows.

    Args:
        table_path: Feature table.
        out_path: CSV path.

    Returns:
        The two leading covariance eigenvalues, the captured variance.
    """
    dataset = load(table_path)
    coordinates, eigenvalues = pca_2d(dataset.samples)
    labels = dataset.labels if dataset.labels is not None else np.full(len(dataset), -1)
    try:
        with open(out_path, "wt", newline="") as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(("x", "y", "label"))
            for (x, y), label in zip(coordinates, labels):
                writer.writerow((repr(float(x)), repr(float(y)), int(label)))
    except OSError as exception:
        raise OutputError(f"Unable to write projection: {exception}")
    return eigenvalues

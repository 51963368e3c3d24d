"""Feature tables: tab-separated text, one labeled vector per line.

Layout::

    # msdial-features dims=<D>
    <label>\t<v1>\t...\t<vD>

Label -1 marks an unlabeled record. The header is optional when the dimension is
passed to the loader.
"""
from __future__ import annotations
from os import PathLike, fspath
from typing import Optional, TextIO, Union

import numpy as np

from msdial._data import DomainDataset, Split
from msdial.exceptions import DataFormatError, OutputError

# Pre-computed image features width
DEFAULT_DIMS = 2048

HEADER_PREFIX = "# msdial-features"
UNLABELED = -1

PathType = Union[str, "PathLike[str]"]


def _header_dims(line: str, path: str, line_number: int) -> int:
    """Dimension declared by the header line.

    Args:
        line: Header line.
        path: File path.
        line_number: Line number.

    Returns:
        Dimension.
    """
    for field in line[len(HEADER_PREFIX) :].split():
        key, _, value = field.partition("=")
        if key == "dims":
            try:
                dims = int(value)
            except ValueError:
                break
            if dims >= 1:
                return dims
            break
    raise DataFormatError(
        f"Invalid feature table header: {line!r}", path, line=line_number
    )


def load(
    path: PathType,
    *,
    dims: Optional[int] = None,
    domain_id: int = 0,
    name: Optional[str] = None,
    split: Split = "train",
) -> DomainDataset:
    """Load a feature table.

    Args:
        path: File path.
        dims: Vectors dimension, that a header must match; the header value is
            used if None, else 2048.
        domain_id: Domain ID.
        name: Domain name, the file path if None.
        split: "train" or "test".

    Returns:
        Dataset with samples [N x D]. Labels are omitted when all records are
        unlabeled.
    """
    path = fspath(path)
    labels: list[int] = []
    record_lines: list[int] = []
    rows: list[np.ndarray] = []
    try:
        with open(path, "rt") as file:
            for line_number, line in enumerate(file, 1):
                line = line.rstrip("\r\n")
                if line.startswith(HEADER_PREFIX):
                    declared = _header_dims(line, path, line_number)
                    if dims is not None and dims != declared:
                        raise DataFormatError(
                            f"Header declares {declared} values, expected {dims}",
                            path,
                            line=line_number,
                        )
                    dims = declared
                    continue
                elif not line or line.startswith("#"):
                    continue
                width = dims or DEFAULT_DIMS
                fields = line.split("\t")
                if len(fields) != width + 1:
                    raise DataFormatError(
                        f"Expected a label and {width} values, "
                        f"got {len(fields)} fields",
                        path,
                        line=line_number,
                    )
                try:
                    labels.append(int(fields[0]))
                    record_lines.append(line_number)
                    rows.append(np.array(fields[1:], dtype=np.float64))
                except ValueError as exception:
                    raise DataFormatError(str(exception), path, line=line_number)
    except OSError as exception:
        raise DataFormatError(f"Unable to read feature table: {exception}", path)

    samples = np.stack(rows) if rows else np.zeros((0, dims or DEFAULT_DIMS))
    if not np.isfinite(samples).all():
        raise DataFormatError("Non-finite feature values", path)
    label_array = np.array(labels, dtype=np.int64)
    unlabeled = label_array == UNLABELED
    if unlabeled.all():
        return DomainDataset(domain_id, name or path, samples, None, split)
    elif unlabeled.any():
        raise DataFormatError(
            "Labeled and unlabeled records are mixed",
            path,
            line=record_lines[int(np.argmax(unlabeled))],
        )
    elif label_array.min() < 0:
        raise DataFormatError(f"Invalid label {label_array.min()}", path)
    return DomainDataset(domain_id, name or path, samples, label_array, split)


def dump(
    file: TextIO, samples: np.ndarray, labels: Optional[np.ndarray] = None
) -> None:
    """Write records to an open text file.

    Args:
        file: Text file.
        samples: Vectors [N x D].
        labels: Labels [N], unlabeled if None.
    """
    rows, dims = samples.shape
    file.write(f"{HEADER_PREFIX} dims={dims}\n")
    for row in range(rows):
        label = UNLABELED if labels is None else int(labels[row])
        values = "\t".join(repr(float(value)) for value in samples[row])
        file.write(f"{label}\t{values}\n")


def write(
    dataset: DomainDataset,
    path: PathType,
    labels: Optional[np.ndarray] = None,
) -> None:
    """Write a dataset as a feature table.

    Args:
        dataset: Dataset, samples flattened to vectors.
        path: File path.
        labels: Labels overriding the dataset ones, for instance target ground truth.
    """
    width = int(np.prod(dataset.samples.shape[1:]))
    samples = dataset.samples.reshape(len(dataset), width)
    if labels is None:
        labels = dataset.labels
    try:
        with open(path, "wt") as file:
            dump(file, samples, labels)
    except OSError as exception:
        raise OutputError(f"Unable to write feature table: {exception}")

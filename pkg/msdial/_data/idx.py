"""IDX binary files (MNIST style digit images and labels)."""
from __future__ import annotations
import gzip
from os import PathLike, fspath
from typing import Union

import numpy as np

from msdial._data import DomainDataset, Split
from msdial.exceptions import DataFormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

PathType = Union[str, "PathLike[str]"]


def _read(path: PathType) -> bytes:
    """Read a file, transparently decompressing ".gz" files.

    Args:
        path: File path.

    Returns:
        Content.
    """
    path = fspath(path)
    try:
        if path.endswith(".gz"):
            with gzip.open(path, "rb") as file:
                return file.read()
        with open(path, "rb") as file:
            return file.read()
    except (OSError, EOFError) as exception:
        raise DataFormatError(f"Unable to read IDX file: {exception}", path)


def parse(content: bytes, magic: int, path: str | None = None) -> np.ndarray:
    """Parse IDX content of unsigned bytes.

    Args:
        content: File content.
        magic: Expected magic number.
        path: File path, for errors.

    Returns:
        Array with the dimensions declared in the header.
    """
    if len(content) < 4:
        raise DataFormatError("Truncated IDX header", path, offset=len(content))
    found = int.from_bytes(content[:4], "big")
    if found != magic:
        raise DataFormatError(
            f"Bad IDX magic number 0x{found:08x}, expected 0x{magic:08x}",
            path,
            offset=0,
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(content) < header:
        raise DataFormatError("Truncated IDX dimensions", path, offset=len(content))
    dims = tuple(
        int.from_bytes(content[4 + 4 * axis : 8 + 4 * axis], "big")
        for axis in range(ndim)
    )
    size = int(np.prod(dims))
    if len(content) < header + size:
        raise DataFormatError(
            f"Truncated IDX data: {size} bytes declared, "
            f"{len(content) - header} available",
            path,
            offset=len(content),
        )
    return np.frombuffer(content, np.uint8, size, header).reshape(dims)


def load(
    images_path: PathType,
    labels_path: PathType,
    *,
    domain_id: int = 0,
    name: str = "idx",
    split: Split = "train",
) -> DomainDataset:
    """Load digit images and labels.

    Args:
        images_path: Images file, magic 0x00000803.
        labels_path: Labels file, magic 0x00000801.
        domain_id: Domain ID.
        name: Domain name.
        split: "train" or "test".

    Returns:
        Dataset with samples [N x 1 x H x W] scaled to [0, 1].
    """
    images = parse(_read(images_path), IMAGES_MAGIC, fspath(images_path))
    labels = parse(_read(labels_path), LABELS_MAGIC, fspath(labels_path))
    if len(images) != len(labels):
        raise DataFormatError(
            f"{len(images)} images but {len(labels)} labels",
            fspath(labels_path),
            offset=4,
        )
    return DomainDataset(
        domain_id=domain_id,
        name=name,
        samples=(images[:, np.newaxis].astype(np.float64) / 255.0),
        labels=labels.astype(np.int64),
        split=split,
    )


def write(path: PathType, array: np.ndarray) -> None:
    """Write unsigned bytes as an IDX file.

    Args:
        path: File path.
        array: Array of values in [0, 255], 1-D for labels, 3-D for images.
    """
    magic = 0x00000800 | array.ndim
    content = magic.to_bytes(4, "big") + b"".join(
        dim.to_bytes(4, "big") for dim in array.shape
    )
    with open(path, "wb") as file:
        file.write(content + np.ascontiguousarray(array, np.uint8).tobytes())

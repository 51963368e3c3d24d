"""Domain datasets and multi-domain batches."""
from __future__ import annotations
from importlib import import_module
from typing import Callable, Iterator, Literal, Optional, Sequence

import numpy as np

from msdial._layers import DomainSegments
from msdial._tensor import Tensor
from msdial.exceptions import DataFormatError, SegmentError

Split = Literal["train", "test"]


class DomainDataset:
    """Samples of one domain split.

    Unlabeled datasets (target domain training data) have `labels` set to None.

    Args:
        domain_id: Domain ID.
        name: Domain name.
        samples: Samples, with a leading sample axis.
        labels: Integer labels, or None if unlabeled.
        split: Split.
    """

    __slots__ = ["domain_id", "name", "samples", "labels", "split"]

    def __init__(
        self,
        domain_id: int,
        name: str,
        samples: np.ndarray,
        labels: Optional[np.ndarray] = None,
        split: Split = "train",
    ) -> None:
        if samples.ndim < 2:
            raise DataFormatError(
                f"Samples must have a leading sample axis, got shape {samples.shape}"
            )
        if labels is not None:
            if labels.shape != (len(samples),):
                raise DataFormatError(
                    f"{len(samples)} samples but labels shape {labels.shape}"
                )
            elif labels.size and labels.min() < 0:
                raise DataFormatError("Labels must be non-negative")
        self.domain_id = domain_id
        self.name = name
        self.samples = samples
        self.labels = labels
        self.split = split

    def __repr__(self) -> str:
        return (
            f"DomainDataset(domain_id={self.domain_id}, name={self.name!r}, "
            f"split={self.split!r}, rows={len(self)})"
        )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def is_labeled(self) -> bool:
        """If True, labels are available.

        Returns:
            Boolean.
        """
        return self.labels is not None

    @property
    def class_count(self) -> int:
        """Classes seen in labels.

        Returns:
            Largest label plus one, 0 if unlabeled.
        """
        if self.labels is None or not self.labels.size:
            return 0
        return int(self.labels.max()) + 1

    def unlabeled(self) -> "DomainDataset":
        """Same samples without labels.

        Returns:
            Dataset.
        """
        return DomainDataset(self.domain_id, self.name, self.samples, None, self.split)

    def with_labels(self, labels: np.ndarray) -> "DomainDataset":
        """Same samples with other labels.

        Args:
            labels: Labels.

        Returns:
            Dataset.
        """
        return DomainDataset(
            self.domain_id, self.name, self.samples, labels, self.split
        )

    def with_domain(self, domain_id: int, name: str | None = None) -> "DomainDataset":
        """Same data under another domain identity.

        Args:
            domain_id: Domain ID.
            name: Domain name, unchanged if None.

        Returns:
            Dataset.
        """
        return DomainDataset(
            domain_id, name or self.name, self.samples, self.labels, self.split
        )

    def take(self, indices: np.ndarray) -> "DomainDataset":
        """Subset of samples.

        Args:
            indices: Sample indices.

        Returns:
            Dataset.
        """
        return DomainDataset(
            self.domain_id,
            self.name,
            self.samples[indices],
            None if self.labels is None else self.labels[indices],
            self.split,
        )


class DomainBatch:
    """Per-domain segments of samples, sources in domain order then target.

    Args:
        data: Samples of all domains.
        segments: Rows of each domain.
        source_labels: Labels of the source rows.
    """

    __slots__ = ["data", "segments", "source_labels"]

    def __init__(
        self, data: Tensor, segments: DomainSegments, source_labels: np.ndarray
    ) -> None:
        self.data = data
        self.segments = segments
        self.source_labels = source_labels

    @property
    def source_rows(self) -> int:
        """Number of leading rows from source domains.

        Returns:
            Rows.
        """
        return len(self.source_labels)


def _check_domains(
    sources: Sequence[DomainDataset], target: DomainDataset, per_domain: int
) -> None:
    """Check datasets can be composed into batches.

    Args:
        sources: Labeled source datasets.
        target: Unlabeled target dataset.
        per_domain: Rows per domain segment.
    """
    if per_domain < 2:
        raise SegmentError(f"At least 2 rows per domain are required, got {per_domain}")
    elif not sources:
        raise SegmentError("At least one source domain is required")
    for source in sources:
        if source.labels is None:
            raise DataFormatError(f"Source domain {source.name} is unlabeled")
    if target.labels is not None:
        raise DataFormatError(f"Target domain {target.name} must be unlabeled")
    for dataset in (*sources, target):
        if len(dataset) < per_domain:
            raise SegmentError(
                f"Domain {dataset.name} has {len(dataset)} samples, "
                f"{per_domain} are required"
            )


def _assemble(
    sources: Sequence[DomainDataset],
    target: DomainDataset,
    indices: Sequence[np.ndarray],
) -> DomainBatch:
    """Concatenate per-domain rows, sources first.

    Args:
        sources: Source datasets.
        target: Target dataset.
        indices: Row indices, one array per domain in the same order.

    Returns:
        Batch.
    """
    domains = (*sources, target)
    data = np.concatenate([ds.samples[idx] for ds, idx in zip(domains, indices)])
    labels = np.concatenate(
        [ds.labels[idx] for ds, idx in zip(sources, indices)]  # type: ignore
    )
    return DomainBatch(
        Tensor(data),
        DomainSegments.from_counts([len(idx) for idx in indices]),
        labels.astype(np.int64),
    )


def compose_batch(
    sources: Sequence[DomainDataset],
    target: DomainDataset,
    per_domain: int,
    rng: np.random.Generator,
) -> DomainBatch:
    """Draw one batch with `per_domain` rows from every domain.

    Args:
        sources: Labeled source datasets, in domain order.
        target: Unlabeled target dataset.
        per_domain: Rows per domain.
        rng: Random generator.

    Returns:
        Batch.
    """
    _check_domains(sources, target, per_domain)
    return _assemble(
        sources,
        target,
        [rng.choice(len(ds), per_domain, replace=False) for ds in (*sources, target)],
    )


def iter_batches(
    sources: Sequence[DomainDataset],
    target: DomainDataset,
    per_domain: int,
    rng: np.random.Generator,
) -> Iterator[DomainBatch]:
    """Batches of one epoch: a pass over the smallest domain.

    Every domain is shuffled once per epoch and drawn without replacement.

    Args:
        sources: Labeled source datasets, in domain order.
        target: Unlabeled target dataset.
        per_domain: Rows per domain.
        rng: Random generator.

    Yields:
        Batches.
    """
    _check_domains(sources, target, per_domain)
    domains = (*sources, target)
    orders = [rng.permutation(len(ds)) for ds in domains]
    for step in range(min(len(ds) for ds in domains) // per_domain):
        rows = slice(step * per_domain, (step + 1) * per_domain)
        yield _assemble(sources, target, [order[rows] for order in orders])


def iter_labeled(
    dataset: DomainDataset, batch_size: int, rng: np.random.Generator
) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Shuffled batches of a labeled dataset, one pass.

    A trailing batch of less than 2 rows is dropped.

    Args:
        dataset: Labeled dataset.
        batch_size: Rows per batch.
        rng: Random generator.

    Yields:
        Samples, labels.
    """
    if dataset.labels is None:
        raise DataFormatError(f"Domain {dataset.name} is unlabeled")
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        rows = order[start : start + batch_size]
        if len(rows) < 2:
            break
        yield Tensor(dataset.samples[rows]), dataset.labels[rows].astype(np.int64)


def merge(datasets: Sequence[DomainDataset], name: str = "merged") -> DomainDataset:
    """Concatenate labeled datasets into a single domain.

    Args:
        datasets: Datasets.
        name: Name of the merged domain.

    Returns:
        Dataset.
    """
    if not datasets:
        raise DataFormatError("Nothing to merge")
    labels = [ds.labels for ds in datasets]
    unlabeled = any(label is None for label in labels)
    return DomainDataset(
        domain_id=0,
        name=name,
        samples=np.concatenate([ds.samples for ds in datasets]),
        labels=None if unlabeled else np.concatenate(labels),  # type: ignore
        split=datasets[0].split,
    )


def split_domains(
    datasets: Sequence[DomainDataset], target: int
) -> tuple[list[DomainDataset], DomainDataset]:
    """Split domains into sources and target.

    Sources keep their relative order with IDs 0..M-1, the target gets ID M.

    Args:
        datasets: Datasets, in domain order.
        target: Target index.

    Returns:
        Sources and target.
    """
    target = range(len(datasets))[target]
    sources = [ds for index, ds in enumerate(datasets) if index != target]
    return (
        [ds.with_domain(index) for index, ds in enumerate(sources)],
        datasets[target].with_domain(len(sources)),
    )


def subsample(dataset: DomainDataset, n: int, seed: int) -> DomainDataset:
    """Uniform subset without replacement.

    Args:
        dataset: Dataset.
        n: Samples to keep.
        seed: Random seed.

    Returns:
        Dataset.
    """
    if not 0 <= n <= len(dataset):
        raise DataFormatError(
            f"Can not draw {n} samples from {dataset.name} ({len(dataset)} samples)"
        )
    rng = np.random.default_rng(seed)
    return dataset.take(rng.choice(len(dataset), n, replace=False))


def subsample_splits(
    train: DomainDataset, test: DomainDataset, n_train: int, n_test: int, seed: int
) -> tuple[DomainDataset, DomainDataset]:
    """Subsample the train and test splits of a domain.

    Args:
        train: Train split.
        test: Test split.
        n_train: Train samples to keep.
        n_test: Test samples to keep.
        seed: Random seed.

    Returns:
        Train and test subsets.
    """
    return subsample(train, n_train, seed), subsample(test, n_test, seed + 1)


Loader = Callable[..., DomainDataset]


def get_loader(name: str) -> Loader:
    """Import a dataset file loader.

    Args:
        name: File format name ("idx", "features").

    Returns:
        Loader function.
    """
    element = f"{__name__}.{name}"
    try:
        module = import_module(element)
    except ImportError:
        from importlib.util import find_spec

        if find_spec(element) is not None:  # pragma: no cover
            raise
        raise NotImplementedError(f"Unsupported dataset format: {name}")
    return getattr(module, "load")  # type: ignore

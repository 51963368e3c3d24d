"""Synthetic domains: one Gaussian class mixture seen through per-domain affine maps."""
from __future__ import annotations
from os import PathLike, fspath
from pathlib import Path
from math import erf, sqrt
from typing import Any, Optional, Union

import numpy as np

from msdial._data import DomainDataset, Split
from msdial._data.features import write
from msdial.exceptions import DataFormatError

# Largest accepted condition number of a domain map
MAX_CONDITION = 1e3

_SPLIT_STREAMS = {"train": 0, "test": 1}


class SyntheticShiftSpec:
    """Generator parameters.

    Latent samples are unit-variance Gaussians centered on `±separation` along one
    latent axis per pair of classes. Domain `d` observes `A_d z + b_d`.

    Args:
        latent_dim: Latent and observed dimension.
        class_count: Classes, at most twice `latent_dim`.
        transforms: Per-domain (A_d, b_d) maps.
        samples_per_domain: Train samples per domain.
        test_samples: Test samples per domain.
        seed: Random seed.
        separation: Distance of class means from the origin.
    """

    __slots__ = [
        "latent_dim",
        "class_count",
        "transforms",
        "samples_per_domain",
        "test_samples",
        "seed",
        "separation",
    ]

    def __init__(
        self,
        latent_dim: int,
        class_count: int,
        transforms: tuple[tuple[np.ndarray, np.ndarray], ...],
        samples_per_domain: int = 2000,
        test_samples: int = 4000,
        seed: int = 0,
        separation: float = 2.0,
    ) -> None:
        if class_count < 2:
            raise DataFormatError(f"At least 2 classes are required, got {class_count}")
        elif class_count > 2 * latent_dim:
            raise DataFormatError(
                f"{class_count} classes do not fit a {latent_dim}-D latent space"
            )
        elif not transforms:
            raise DataFormatError("At least one domain is required")
        shape = (latent_dim, latent_dim)
        for index, (scale, offset) in enumerate(transforms):
            if scale.shape != shape or offset.shape != (latent_dim,):
                raise DataFormatError(
                    f"Domain {index} map has shapes {scale.shape} and {offset.shape}"
                )
            condition = np.linalg.cond(scale)
            if not condition < MAX_CONDITION:
                raise DataFormatError(
                    f"Domain {index} map is ill-conditioned "
                    f"(condition number {condition:.3g})"
                )
        self.latent_dim = latent_dim
        self.class_count = class_count
        self.transforms = tuple(transforms)
        self.samples_per_domain = samples_per_domain
        self.test_samples = test_samples
        self.seed = seed
        self.separation = separation

    def __repr__(self) -> str:
        return (
            f"SyntheticShiftSpec(domains={self.domain_count}, "
            f"latent_dim={self.latent_dim}, class_count={self.class_count}, "
            f"seed={self.seed})"
        )

    @property
    def domain_count(self) -> int:
        """Number of domains.

        Returns:
            Domains.
        """
        return len(self.transforms)

    def class_means(self) -> np.ndarray:
        """Latent class means: even classes on +axis, odd classes on -axis.

        Returns:
            Means [C x latent_dim].
        """
        means = np.zeros((self.class_count, self.latent_dim))
        for label in range(self.class_count):
            sign = 1.0 if label % 2 == 0 else -1.0
            means[label, label // 2] = sign * self.separation
        return means

    @classmethod
    def no_shift(
        cls, domains: int = 4, latent_dim: int = 4, class_count: int = 2, **kwargs: Any
    ) -> "SyntheticShiftSpec":
        """Identically distributed domains.

        Args:
            domains: Number of domains.
            latent_dim: Latent dimension.
            class_count: Classes.
            kwargs: Other fields.

        Returns:
            Spec.
        """
        identity = (np.eye(latent_dim), np.zeros(latent_dim))
        return cls(latent_dim, class_count, (identity,) * domains, **kwargs)

    @classmethod
    def diagonal_shift(
        cls,
        domains: int = 4,
        latent_dim: int = 4,
        class_count: int = 2,
        seed: int = 0,
        **kwargs: Any,
    ) -> "SyntheticShiftSpec":
        """Domains with positive diagonal scaling and offsets.

        Scales are drawn in [0.5, 2]. The last domain, the default target, is
        offset far away from the others.

        Args:
            domains: Number of domains.
            latent_dim: Latent dimension.
            class_count: Classes.
            seed: Random seed, for maps and samples.
            kwargs: Other fields.

        Returns:
            Spec.
        """
        rng = np.random.default_rng([seed, domains, latent_dim])
        transforms = []
        for domain in range(domains):
            scale = np.diag(rng.uniform(0.5, 2.0, latent_dim))
            if domain == domains - 1:
                signs = rng.choice((-1.0, 1.0), latent_dim)
                offset = signs * rng.uniform(6.0, 10.0, latent_dim)
            else:
                offset = rng.uniform(-2.0, 2.0, latent_dim)
            transforms.append((scale, offset))
        return cls(latent_dim, class_count, tuple(transforms), seed=seed, **kwargs)


def synth_domain(
    spec: SyntheticShiftSpec, domain: int, split: Split = "train"
) -> DomainDataset:
    """Labeled samples of one domain.

    Args:
        spec: Generator parameters.
        domain: Domain index.
        split: "train" or "test", drawn from independent streams.

    Returns:
        Dataset.
    """
    if not 0 <= domain < spec.domain_count:
        raise DataFormatError(
            f"No domain {domain} in a {spec.domain_count} domains spec"
        )
    rows = spec.samples_per_domain if split == "train" else spec.test_samples
    rng = np.random.default_rng([spec.seed, domain, _SPLIT_STREAMS[split]])
    labels = rng.permutation(np.arange(rows) % spec.class_count)
    latent = spec.class_means()[labels] + rng.standard_normal((rows, spec.latent_dim))
    scale, offset = spec.transforms[domain]
    return DomainDataset(
        domain_id=domain,
        name=f"domain{domain}",
        samples=latent @ scale.T + offset,
        labels=labels.astype(np.int64),
        split=split,
    )


def synth_affine_domains(
    spec: SyntheticShiftSpec,
    split: Split = "train",
    target: Optional[int] = -1,
) -> list[DomainDataset]:
    """Samples of every domain.

    Args:
        spec: Generator parameters.
        split: "train" or "test".
        target: Index of the domain whose train labels are withheld, the last one
            by default. If None, every domain is labeled. Test splits are always
            labeled, being used for evaluation only.

    Returns:
        Datasets, in domain order.
    """
    datasets = [synth_domain(spec, index, split) for index in range(spec.domain_count)]
    if target is not None and split == "train":
        index = range(spec.domain_count)[target]
        datasets[index] = datasets[index].unlabeled()
    return datasets


def write_synthetic(
    spec: SyntheticShiftSpec, directory: Union[str, "PathLike[str]"]
) -> list[Path]:
    """Write every domain split as labeled feature tables.

    Files are named "domain<d>.<split>.tsv".

    Args:
        spec: Generator parameters.
        directory: Output directory, created if missing.

    Returns:
        Written paths.
    """
    root = Path(fspath(directory))
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    split: Split
    for split in ("train", "test"):
        for dataset in synth_affine_domains(spec, split, target=None):
            path = root / f"{dataset.name}.{split}.tsv"
            write(dataset, path)
            paths.append(path)
    return paths


def bayes_accuracy(spec: SyntheticShiftSpec) -> float:
    """Bayes accuracy of the two classes latent mixture.

    Args:
        spec: Generator parameters, with 2 classes.

    Returns:
        Phi(separation).
    """
    if spec.class_count != 2:
        raise DataFormatError("Closed form Bayes accuracy requires 2 classes")
    return 0.5 * (1.0 + erf(spec.separation / sqrt(2.0)))


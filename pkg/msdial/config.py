"""Experiment configuration.

Configuration files are flat "key = value" text with "#" comments. Dotted keys
address nested sections::

    task = features
    target_name = clipart
    lambda = 0.001
    domain.art.format = features
    domain.art.train = art_train.tsv
    domain.art.test = art_test.tsv
    synthetic.latent_dim = 4
"""
from __future__ import annotations
from os import PathLike, fspath
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from msdial import settings
from msdial._data.synthetic import SyntheticShiftSpec
from msdial._graph import ArchitectureSpec, Task
from msdial._layers import CONV_DROPOUT, FC_DROPOUT
from msdial.exceptions import ConfigError, SegmentError
from msdial.losses import DEFAULT_LAMBDA, LossConfig, Reduction
from msdial.optimizer import EPS, LEARNING_RATE, RHO

Method = Literal["src", "tar", "msdial"]
METHODS: tuple[Method, ...] = ("src", "tar", "msdial")

# Mini-batch sizes per task
BATCH_SIZES = {"digits": 128, "features": 32}

PathType = Union[str, "PathLike[str]"]


def _split_list(value: Any) -> Any:
    """Split comma separated strings.

    Args:
        value: Raw value.

    Returns:
        List if value is a string.
    """
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class DomainSource(BaseModel):
    """Dataset files of one domain.

    "idx" domains list the images then labels files of each split, "features"
    domains list one feature table per split.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    format: Literal["idx", "features"] = "features"
    train: tuple[str, ...]
    test: tuple[str, ...]

    @field_validator("train", "test", mode="before")
    @classmethod
    def split_files(cls, value: Any) -> Any:
        return _split_list(value)

    @model_validator(mode="after")
    def check_files(self) -> "DomainSource":
        expected = 2 if self.format == "idx" else 1
        for split in (self.train, self.test):
            if len(split) != expected:
                raise ValueError(
                    f"{self.format} domains require {expected} file(s) per split, "
                    f"got {len(split)}"
                )
        return self


class SyntheticConfig(BaseModel):
    """Synthetic domains generator preset."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    domains: int = Field(4, ge=2)
    latent_dim: int = Field(4, ge=1)
    classes: int = Field(2, ge=2)
    samples: int = Field(2000, ge=2)
    test_samples: int = Field(4000, ge=1)
    shift: Literal["diagonal", "identity"] = "diagonal"
    separation: float = Field(2.0, gt=0.0)
    seed: int = 0

    def build(self) -> SyntheticShiftSpec:
        """Generator parameters.

        Returns:
            Spec.
        """
        preset = (
            SyntheticShiftSpec.diagonal_shift
            if self.shift == "diagonal"
            else SyntheticShiftSpec.no_shift
        )
        return preset(
            domains=self.domains,
            latent_dim=self.latent_dim,
            class_count=self.classes,
            samples_per_domain=self.samples,
            test_samples=self.test_samples,
            separation=self.separation,
            seed=self.seed,
        )

    @property
    def domain_names(self) -> tuple[str, ...]:
        """Generated domains names.

        Returns:
            Names.
        """
        return tuple(f"domain{index}" for index in range(self.domains))


class ExperimentConfig(BaseModel):
    """Experiment protocol parameters.

    Exactly one of `domains` and `synthetic` must be set. If `target_name` is
    None, every domain takes a turn as target.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    task: Task = "features"
    domains: Optional[dict[str, DomainSource]] = None
    synthetic: Optional[SyntheticConfig] = None
    target_name: Optional[str] = None
    method: Method = "msdial"
    lambda_: float = Field(DEFAULT_LAMBDA, ge=0.0, alias="lambda")
    epochs: int = Field(settings.EPOCHS, ge=1)
    batch_size: Optional[int] = Field(None, ge=2)
    replications: int = Field(settings.REPLICATIONS, ge=1)
    seed: int = settings.SEED
    source_reduction: Reduction = "mean"
    target_reduction: Reduction = "mean"
    output_dir: str = settings.OUTPUT_DIR
    classes: Optional[int] = Field(None, ge=2)
    hidden: Optional[tuple[int, ...]] = None
    dropout_fc: float = Field(FC_DROPOUT, ge=0.0, lt=1.0)
    dropout_conv: float = Field(CONV_DROPOUT, ge=0.0, lt=1.0)
    learning_rate: float = Field(LEARNING_RATE, gt=0.0)
    rho: float = Field(RHO, ge=0.0, lt=1.0)
    adadelta_eps: float = Field(EPS, gt=0.0)
    n_train: Optional[int] = Field(None, ge=2)
    n_test: Optional[int] = Field(None, ge=1)

    @field_validator("hidden", mode="before")
    @classmethod
    def split_hidden(cls, value: Any) -> Any:
        return _split_list(value)

    @model_validator(mode="after")
    def check_domains(self) -> "ExperimentConfig":
        if (self.domains is None) == (self.synthetic is None):
            raise ValueError("Exactly one of 'domains' and 'synthetic' is required")
        names = self.domain_names
        if len(names) < 2:
            raise ValueError(f"At least 2 domains are required, got {len(names)}")
        elif self.target_name is not None and self.target_name not in names:
            raise ValueError(
                f"Target {self.target_name!r} is not a domain: {', '.join(names)}"
            )
        return self

    @property
    def domain_names(self) -> tuple[str, ...]:
        """Domain names, in domain order.

        Returns:
            Names.
        """
        if self.synthetic is not None:
            return self.synthetic.domain_names
        return tuple(self.domains or ())

    @property
    def targets(self) -> tuple[str, ...]:
        """Target domains to run.

        Returns:
            Names.
        """
        if self.target_name is None:
            return self.domain_names
        return (self.target_name,)

    @property
    def loss(self) -> LossConfig:
        """Loss configuration.

        Returns:
            Loss configuration.
        """
        return LossConfig(
            lambda_=self.lambda_,
            source_reduction=self.source_reduction,
            target_reduction=self.target_reduction,
        )

    @property
    def effective_batch_size(self) -> int:
        """Mini-batch size, the task default if unset.

        Returns:
            Rows.
        """
        return self.batch_size or BATCH_SIZES[self.task]

    def per_domain(self, domain_count: int) -> int:
        """Rows per domain in a composed mini-batch.

        Args:
            domain_count: Sources plus target.

        Returns:
            Rows.
        """
        rows = self.effective_batch_size // domain_count
        if rows < 2:
            raise SegmentError(
                f"Batch size {self.effective_batch_size} is too small "
                f"for {domain_count} domains"
            )
        return rows

    def architecture(
        self, classes: int, sources: int, sample_shape: tuple[int, ...]
    ) -> ArchitectureSpec:
        """Architecture for loaded data.

        Args:
            classes: Classes found in the data, unless configured.
            sources: Number of source domains.
            sample_shape: Shape of one sample.

        Returns:
            Architecture.
        """
        fields: dict[str, Any] = dict(
            task=self.task,
            classes=self.classes or classes,
            sources=sources,
            hidden=self.hidden,
            dropout_fc=self.dropout_fc,
            dropout_conv=self.dropout_conv,
        )
        if self.task == "digits":
            if len(sample_shape) != 3 or sample_shape[1] != sample_shape[2]:
                raise ConfigError(f"Digits require square images, got {sample_shape}")
            fields.update(in_channels=sample_shape[0], image_size=sample_shape[1])
        else:
            if len(sample_shape) != 1:
                raise ConfigError(f"Features require vectors, got {sample_shape}")
            fields.update(input_width=sample_shape[0])
        return ArchitectureSpec(**fields)


def parse_config(text: str, path: str | None = None) -> dict[str, Any]:
    """Parse flat "key = value" text into nested fields.

    Args:
        text: Configuration text.
        path: File path, for errors.

    Returns:
        Fields.
    """
    fields: dict[str, Any] = {}
    for line_number, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, separator, value = line.partition("=")
        key = key.strip()
        if not separator or not key:
            where = f"{path}, line {line_number}" if path else f"line {line_number}"
            raise ConfigError(f"Expected 'key = value' ({where}): {line!r}")
        value = value.strip()
        parts = key.split(".")
        if parts[0] == "domain":
            if len(parts) != 3:
                raise ConfigError(f"Expected 'domain.<name>.<field>', got {key!r}")
            fields.setdefault("domains", {}).setdefault(parts[1], {})[parts[2]] = value
        elif parts[0] == "synthetic" and len(parts) == 2:
            fields.setdefault("synthetic", {})[parts[1]] = value
        elif len(parts) == 1:
            fields[key] = value
        else:
            raise ConfigError(f"Unsupported configuration key {key!r}")
    return fields


def load_config(path: PathType | None = None, **overrides: Any) -> ExperimentConfig:
    """Load an experiment configuration.

    Args:
        path: Configuration file, optional.
        overrides: Fields overriding the file values, None values are ignored.
            Dictionaries are merged into the file section of the same name.

    Returns:
        Configuration.
    """
    fields: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rt") as file:
                fields = parse_config(file.read(), fspath(path))
        except OSError as exception:
            raise ConfigError(f"Unable to read configuration: {exception}")
    for key, value in overrides.items():
        if value is None:
            continue
        elif isinstance(value, dict) and isinstance(fields.get(key), dict):
            fields[key] = {**fields[key], **value}
        else:
            fields[key] = value
    return ExperimentConfig.model_validate(fields)

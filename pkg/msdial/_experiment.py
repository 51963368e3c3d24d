"""Leave-one-domain-out experiment runner."""
from __future__ import annotations
from asyncio import new_event_loop
from contextlib import AsyncExitStack
from math import sqrt
from typing import Any, AsyncContextManager, Coroutine, Iterable, Optional, TypeVar

import numpy as np
from jhalog import AsyncLogger, LogEvent

from msdial import settings
from msdial._data import DomainDataset, get_loader, split_domains, subsample_splits
from msdial._data.synthetic import synth_affine_domains
from msdial._graph import ModelGraph, build_model, insert_ms_dial
from msdial._training import TrainingHistory, evaluate, fit
from msdial.config import ExperimentConfig, Method
from msdial.exceptions import ConfigError, DataFormatError, TrainingDivergedError
from msdial.json import dumps

_T = TypeVar("_T")

# Entropy weights of the ablation study
LAMBDA_GRID = (0.001, 0.005, 0.01, 0.05, 0.1)

DomainSplits = list[tuple[DomainDataset, DomainDataset]]


def get_logger() -> LogEvent:
    """Get the current replication log event.

    Returns:
        Log Event.
    """
    return LogEvent.from_context()


class ResultRecord:
    """Accuracies of the replications of one experiment.

    Args:
        method: Method.
        target_name: Target domain.
        lambda_: Entropy weight.
        seed: Base random seed.
    """

    __slots__ = [
        "method",
        "target_name",
        "lambda_",
        "seed",
        "accuracies",
        "failures",
        "histories",
    ]

    def __init__(
        self, method: Method, target_name: str, lambda_: float, seed: int
    ) -> None:
        self.method = method
        self.target_name = target_name
        self.lambda_ = lambda_
        self.seed = seed
        self.accuracies: list[float] = []
        self.failures: list[str] = []
        self.histories: list[TrainingHistory] = []

    def __repr__(self) -> str:
        return (
            f"ResultRecord(method={self.method!r}, target_name={self.target_name!r}, "
            f"mean={self.mean:.4f}, standard_error={self.standard_error:.4f})"
        )

    @property
    def replications(self) -> int:
        """Number of successful replications.

        Returns:
            Count.
        """
        return len(self.accuracies)

    @property
    def mean(self) -> float:
        """Mean accuracy.

        Returns:
            Accuracy, NaN without successful replication.
        """
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def standard_error(self) -> float:
        """Sample standard deviation over the square root of the replications.

        Returns:
            Standard error, 0 for a single replication.
        """
        if len(self.accuracies) < 2:
            return 0.0 if self.accuracies else float("nan")
        return float(np.std(self.accuracies, ddof=1)) / sqrt(len(self.accuracies))

    def to_dict(self) -> dict[str, Any]:
        """JSON serializable summary.

        Returns:
            Summary.
        """
        return dict(
            method=self.method,
            target=self.target_name,
            mean=self.mean,
            stderr=self.standard_error,
            replications=self.replications,
            accuracies=self.accuracies,
            failures=self.failures,
            seed=self.seed,
            **{"lambda": self.lambda_},
        )


def load_domains(cfg: ExperimentConfig) -> DomainSplits:
    """Load the train and test splits of every domain, labeled, in domain order.

    Args:
        cfg: Configuration.

    Returns:
        (train, test) pairs.
    """
    if cfg.synthetic is not None:
        spec = cfg.synthetic.build()
        domains = list(
            zip(
                synth_affine_domains(spec, "train", target=None),
                synth_affine_domains(spec, "test"),
            )
        )
    else:
        domains = []
        for index, (name, source) in enumerate((cfg.domains or {}).items()):
            load = get_loader(source.format)
            train = load(*source.train, domain_id=index, name=name, split="train")
            test = load(*source.test, domain_id=index, name=name, split="test")
            if train.labels is None or test.labels is None:
                raise DataFormatError(
                    f"Domain {name} files must be labeled; target labels are "
                    "withheld at training time"
                )
            domains.append((train, test))

    if cfg.n_train is not None or cfg.n_test is not None:
        domains = [
            subsample_splits(
                train,
                test,
                len(train) if cfg.n_train is None else cfg.n_train,
                len(test) if cfg.n_test is None else cfg.n_test,
                cfg.seed + index,
            )
            for index, (train, test) in enumerate(domains)
        ]
    return domains


class TargetData:
    """Datasets of one leave-one-domain-out split.

    Args:
        domains: Labeled (train, test) pairs, in domain order.
        target_index: Target domain index.
        method: Method; target train labels are only kept for "tar".
    """

    __slots__ = ["sources", "target", "test", "name"]

    def __init__(
        self, domains: DomainSplits, target_index: int, method: Method
    ) -> None:
        sources, target = split_domains([train for train, _ in domains], target_index)
        self.sources = sources
        self.target = target if method == "tar" else target.unlabeled()
        self.test = domains[target_index][1].with_domain(len(sources))
        self.name = target.name

    @property
    def domain_count(self) -> int:
        """Sources plus target.

        Returns:
            Domains.
        """
        return len(self.sources) + 1


def build_replication_model(
    cfg: ExperimentConfig, data: TargetData, rng: np.random.Generator, method: Method
) -> tuple[ModelGraph, int]:
    """Model of one replication.

    Args:
        cfg: Configuration.
        data: Datasets.
        rng: Random generator.
        method: Method.

    Returns:
        Model, domain ID routing evaluation.
    """
    classes = max(ds.class_count for ds in (*data.sources, data.test))
    spec = cfg.architecture(classes, len(data.sources), data.test.samples.shape[1:])
    model = build_model(spec, rng)
    if method == "msdial":
        return insert_ms_dial(model, data.domain_count), data.domain_count - 1
    return model, 0


class Experiment:
    """Experiment runner.

    Replications are logged as jhalog events.

    Args:
        jhalog_config: Overrides of the jhalog logger parameters.
    """

    __slots__ = ["_loop", "_exit_stack", "_logger"]

    DEFAULT_JHALOG_CONFIG = dict(
        calculate_uptime=False, backend=settings.LOG_BACKEND, json_dumps=dumps
    )

    def __init__(self, jhalog_config: dict[str, Any] | None = None) -> None:
        self._loop = new_event_loop()
        self._exit_stack = AsyncExitStack()
        kwargs: dict[str, Any] = self.DEFAULT_JHALOG_CONFIG.copy()
        if jhalog_config:
            kwargs.update(jhalog_config)
        self._logger = AsyncLogger(**kwargs)
        self.enter_async_context(self._logger)

    def __del__(self) -> None:
        self.close()

    def close(self) -> None:
        """Close the logger and the event loop."""
        if self._loop.is_closed():
            return
        self.run_async(self._exit_stack.__aexit__(None, None, None))
        self._loop.close()

    def enter_async_context(self, context: AsyncContextManager[_T]) -> _T:
        """Initialize an async context manager.

        The context manager will be exited properly on runner closing.

        Args:
            context: Async Object to initialize.

        Returns:
            Initialized object.
        """
        return self._loop.run_until_complete(
            self._exit_stack.enter_async_context(context)
        )

    def run_async(self, task: Coroutine[Any, Any, _T]) -> _T:
        """Run an async task in the sync context.

        Args:
            task: Async task.

        Returns:
            Task result.
        """
        return self._loop.run_until_complete(task)

    def run_experiment(
        self, cfg: ExperimentConfig, domains: Optional[DomainSplits] = None
    ) -> ResultRecord:
        """Run the replications of the configured method on the configured target.

        Args:
            cfg: Configuration, with a target.
            domains: Loaded domains, loaded from the configuration if None.

        Returns:
            Result.
        """
        if cfg.target_name is None:
            raise ConfigError("A target domain is required")
        domains = load_domains(cfg) if domains is None else domains
        target_index = cfg.domain_names.index(cfg.target_name)
        data = TargetData(domains, target_index, cfg.method)
        return self.run_async(self._run(cfg, data))

    async def _run(self, cfg: ExperimentConfig, data: TargetData) -> ResultRecord:
        """Run replications, one after another.

        Runs on the event loop that jhalog events require.

        Args:
            cfg: Configuration.
            data: Datasets.

        Returns:
            Result.
        """
        record = ResultRecord(cfg.method, data.name, cfg.lambda_, cfg.seed)
        for index in range(cfg.replications):
            outcome = self._replicate(cfg, data, index)
            if isinstance(outcome, TrainingDivergedError):
                record.failures.append(f"replication {index}: {outcome.error_detail}")
            else:
                accuracy, history = outcome
                record.accuracies.append(accuracy)
                record.histories.append(history)
        return record

    def _replicate(
        self, cfg: ExperimentConfig, data: TargetData, replication: int
    ) -> tuple[float, TrainingHistory] | TrainingDivergedError:
        """Train and evaluate one replication.

        Args:
            cfg: Configuration.
            data: Datasets.
            replication: Replication index, seeding its random stream.

        Returns:
            Accuracy and history, or the divergence error.
        """
        with self._logger.create_event(
            method=cfg.method,
            target=data.name,
            replication=replication,
            seed=cfg.seed,
            epochs=cfg.epochs,
            **{"lambda": cfg.lambda_},
        ) as event:
            rng = np.random.default_rng([cfg.seed, replication])
            model, domain_id = build_replication_model(cfg, data, rng, cfg.method)
            try:
                history = fit(model, cfg.method, cfg, data.sources, data.target, rng)
            except TrainingDivergedError as exception:
                event.status_code_from_exception(exception)
                event.error_detail = exception.error_detail
                return exception
            accuracy = evaluate(model, data.test, domain_id)
            event["accuracy"] = accuracy
            event["source_loss"] = history.source_loss[-1]
            event["target_entropy"] = history.target_entropy[-1]
            return accuracy, history

    def train_model(
        self, cfg: ExperimentConfig, domains: Optional[DomainSplits] = None
    ) -> tuple[ModelGraph, int, TargetData]:
        """Train a single model of the configured method and target.

        Args:
            cfg: Configuration, with a target.
            domains: Loaded domains, loaded from the configuration if None.

        Returns:
            Model, domain ID routing evaluation, datasets.
        """
        if cfg.target_name is None:
            raise ConfigError("A target domain is required")
        domains = load_domains(cfg) if domains is None else domains
        data = TargetData(domains, cfg.domain_names.index(cfg.target_name), cfg.method)
        model, domain_id = self.run_async(self._train(cfg, data))
        return model, domain_id, data

    async def _train(
        self, cfg: ExperimentConfig, data: TargetData
    ) -> tuple[ModelGraph, int]:
        """Train the model of the first replication.

        Args:
            cfg: Configuration.
            data: Datasets.

        Returns:
            Model, domain ID routing evaluation.
        """
        rng = np.random.default_rng([cfg.seed, 0])
        model, domain_id = build_replication_model(cfg, data, rng, cfg.method)
        with self._logger.create_event(
            method=cfg.method, target=data.name, replication=0, seed=cfg.seed
        ):
            fit(model, cfg.method, cfg, data.sources, data.target, rng)
        return model, domain_id

    def lambda_sweep(
        self, cfg: ExperimentConfig, values: Iterable[float] = LAMBDA_GRID
    ) -> list[ResultRecord]:
        """Run the experiment for several entropy weights.

        Without configured target, every domain takes a turn as target for each
        entropy weight, so that results can be averaged over targets.

        Args:
            cfg: Configuration.
            values: Entropy weights.

        Returns:
            Results sorted by entropy weight, then by target.
        """
        values = sorted(set(values))
        if not values:
            raise ConfigError("At least one entropy weight is required")
        domains = load_domains(cfg)
        return [
            self.run_experiment(
                cfg.model_copy(update=dict(lambda_=value, target_name=target)),
                domains,
            )
            for value in values
            for target in cfg.targets
        ]

    def leave_one_domain_out(
        self, cfg: ExperimentConfig, methods: Iterable[Method] = ("src", "msdial")
    ) -> list[ResultRecord]:
        """Each domain takes a turn as target, the others being sources.

        Args:
            cfg: Configuration; its target, if any, restricts the targets.
            methods: Methods to run on every target.

        Returns:
            Results, by target then method.
        """
        domains = load_domains(cfg)
        return [
            self.run_experiment(
                cfg.model_copy(update=dict(target_name=target, method=method)), domains
            )
            for target in cfg.targets
            for method in methods
        ]


def run_experiment(cfg: ExperimentConfig, **kwargs: Any) -> ResultRecord:
    """Run the replications of an experiment.

    Args:
        cfg: Configuration, with a target.
        kwargs: Experiment runner parameters.

    Returns:
        Result.
    """
    experiment = Experiment(**kwargs)
    try:
        return experiment.run_experiment(cfg)
    finally:
        experiment.close()


def lambda_sweep(
    cfg: ExperimentConfig, values: Iterable[float] = LAMBDA_GRID, **kwargs: Any
) -> list[ResultRecord]:
    """Run the experiment for several entropy weights.

    Args:
        cfg: Configuration; without target, every domain is a target in turn.
        values: Entropy weights.
        kwargs: Experiment runner parameters.

    Returns:
        Results sorted by entropy weight, then by target.
    """
    experiment = Experiment(**kwargs)
    try:
        return experiment.lambda_sweep(cfg, values)
    finally:
        experiment.close()


def leave_one_domain_out(
    cfg: ExperimentConfig, methods: Iterable[Method] = ("src", "msdial"), **kwargs: Any
) -> list[ResultRecord]:
    """Each domain takes a turn as target, the others being sources.

    Args:
        cfg: Configuration.
        methods: Methods to run on every target.
        kwargs: Experiment runner parameters.

    Returns:
        Results, by target then method.
    """
    experiment = Experiment(**kwargs)
    try:
        return experiment.leave_one_domain_out(cfg, methods)
    finally:
        experiment.close()

"""Training loops and evaluation."""
from __future__ import annotations
from typing import Optional, Sequence

import numpy as np

from msdial._data import DomainBatch, DomainDataset, iter_batches, iter_labeled, merge
from msdial._graph import ModelGraph
from msdial._layers import DomainSegments
from msdial._tensor import Tape, Tensor, log_softmax, no_grad, slice_rows
from msdial.config import ExperimentConfig, Method
from msdial.exceptions import DataFormatError, TrainingDivergedError
from msdial.losses import LossConfig, source_ce, target_entropy, total_loss
from msdial.optimizer import Adadelta

# Rows per eval-mode forward pass
EVAL_CHUNK = 512

# Target samples used to monitor the entropy of models not trained on them
MONITOR_SAMPLES = 1024


class TrainingHistory:
    """Per-epoch training curves."""

    __slots__ = ["source_loss", "target_entropy"]

    def __init__(self) -> None:
        self.source_loss: list[float] = []
        self.target_entropy: list[float] = []

    def __len__(self) -> int:
        return len(self.source_loss)

    def append(self, source_loss: float, target_entropy: float) -> None:
        """Record an epoch.

        Args:
            source_loss: Mean supervised loss over the epoch batches.
            target_entropy: Mean target entropy over the epoch batches.
        """
        self.source_loss.append(source_loss)
        self.target_entropy.append(target_entropy)


def predict(
    model: ModelGraph, samples: np.ndarray, domain_id: int, *, stop: int | None = None
) -> np.ndarray:
    """Eval-mode forward pass, in chunks.

    Args:
        model: Model.
        samples: Samples.
        domain_id: Domain whose statistics route the alignment layers.
        stop: If specified, returns the activations entering this node.

    Returns:
        Logits, or activations.
    """
    if not len(samples):
        raise DataFormatError("No samples to predict")
    outputs = []
    with no_grad():
        for start in range(0, len(samples), EVAL_CHUNK):
            chunk = samples[start : start + EVAL_CHUNK]
            outputs.append(model.forward(chunk, domain_id, "eval", stop=stop).data)
    return np.concatenate(outputs)


def evaluate(model: ModelGraph, dataset: DomainDataset, domain_id: int) -> float:
    """Top-1 accuracy, ties resolved to the lowest class index.

    Args:
        model: Model.
        dataset: Labeled dataset.
        domain_id: Domain whose statistics route the alignment layers.

    Returns:
        Accuracy in [0, 1].
    """
    if dataset.labels is None:
        raise DataFormatError(f"Evaluation requires labels, {dataset.name} has none")
    elif not len(dataset):
        raise DataFormatError(f"Domain {dataset.name} has no evaluation samples")
    predictions = np.argmax(predict(model, dataset.samples, domain_id), axis=1)
    return float(np.mean(predictions == dataset.labels))


def mean_entropy(model: ModelGraph, samples: np.ndarray, domain_id: int) -> float:
    """Mean prediction entropy of samples.

    Args:
        model: Model.
        samples: Samples.
        domain_id: Domain whose statistics route the alignment layers.

    Returns:
        Entropy.
    """
    with no_grad():
        return target_entropy(log_softmax(predict(model, samples, domain_id))).item()


class Trainer:
    """Trains a model with one of the protocol methods.

    Args:
        model: Model, with alignment layers for "msdial".
        method: "src", "tar" or "msdial".
        cfg: Experiment configuration.
        rng: Random generator for batches and dropout.
    """

    __slots__ = ["model", "method", "cfg", "loss", "optimizer", "rng", "_position"]

    def __init__(
        self,
        model: ModelGraph,
        method: Method,
        cfg: ExperimentConfig,
        rng: np.random.Generator,
    ) -> None:
        self.model = model
        self.method = method
        self.loss: LossConfig = cfg.loss
        self.optimizer = Adadelta(
            model.parameters(), cfg.rho, cfg.adadelta_eps, cfg.learning_rate
        )
        self.cfg = cfg
        self.rng = rng
        self._position: tuple[int, int] | None = None

    def fit(
        self,
        sources: Sequence[DomainDataset],
        target: DomainDataset,
        epochs: int,
    ) -> TrainingHistory:
        """Train.

        "msdial" trains on composed batches of the labeled sources and the
        unlabeled target. "src" trains on the merged sources, "tar" on `target`
        which must then be labeled.

        Args:
            sources: Labeled source datasets, domain IDs 0..M-1.
            target: Target train dataset, domain ID M.
            epochs: Epochs.

        Returns:
            History.
        """
        history = TrainingHistory()
        merged = merge(sources, "sources") if self.method == "src" else target
        for epoch in range(epochs):
            if self.method == "msdial":
                losses = self._msdial_epoch(sources, target, epoch)
            elif self.method == "src":
                losses = self._supervised_epoch(merged, epoch)
                losses = losses[0], self._monitor(target)
            elif self.method == "tar":
                losses = self._supervised_epoch(target, epoch)
            else:
                raise ValueError(f"Unsupported method: {self.method}")
            history.append(*losses)
        self._check_outputs(target, len(sources))
        return history

    def _step(self, total: Tensor, epoch: int, step: int) -> None:
        """Backward pass and parameters update.

        Args:
            total: Loss.
            epoch: Epoch.
            step: Step in epoch.
        """
        if not np.isfinite(total.item()):
            self.optimizer.zero_grad()
            raise TrainingDivergedError(
                f"Non-finite loss {total.item()}", epoch=epoch, step=step
            )
        total.backward()
        self.optimizer.step()
        self._position = (epoch, step)
        for param in self.optimizer.params:
            if not np.isfinite(param.data).all():
                raise TrainingDivergedError(
                    "Non-finite parameters", epoch=epoch, step=step
                )

    def _msdial_epoch(
        self, sources: Sequence[DomainDataset], target: DomainDataset, epoch: int
    ) -> tuple[float, float]:
        """Train one epoch on composed batches.

        Args:
            sources: Labeled source datasets.
            target: Unlabeled target dataset.
            epoch: Epoch.

        Returns:
            Mean source loss, mean target entropy.
        """
        per_domain = self.cfg.per_domain(len(sources) + 1)
        source_losses = []
        entropies = []
        batch: DomainBatch
        for step, batch in enumerate(
            iter_batches(sources, target, per_domain, self.rng)
        ):
            with Tape():
                log_probs = log_softmax(
                    self.model.forward(batch.data, batch.segments, "train", self.rng)
                )
                rows = batch.source_rows
                ls = source_ce(
                    slice_rows(log_probs, 0, rows),
                    batch.source_labels,
                    self.loss.source_reduction,
                )
                lt = target_entropy(
                    slice_rows(log_probs, rows, log_probs.shape[0]),
                    self.loss.target_reduction,
                )
                self._step(total_loss(ls, lt, self.loss), epoch, step)
            source_losses.append(ls.item())
            entropies.append(lt.item())
        return _mean(source_losses), _mean(entropies)

    def _supervised_epoch(
        self, dataset: DomainDataset, epoch: int
    ) -> tuple[float, float]:
        """Train one epoch on a single labeled domain.

        Args:
            dataset: Labeled dataset.
            epoch: Epoch.

        Returns:
            Mean loss, mean prediction entropy.
        """
        losses = []
        entropies = []
        for step, (samples, labels) in enumerate(
            iter_labeled(dataset, self.cfg.effective_batch_size, self.rng)
        ):
            with Tape():
                log_probs = log_softmax(
                    self.model.forward(
                        samples, DomainSegments.single(len(samples)), "train", self.rng
                    )
                )
                ls = source_ce(log_probs, labels, self.loss.source_reduction)
                self._step(ls, epoch, step)
            with no_grad():
                entropies.append(target_entropy(log_probs.detach()).item())
            losses.append(ls.item())
        return _mean(losses), _mean(entropies)

    def _check_outputs(self, target: DomainDataset, source_count: int) -> None:
        """Check the trained model predicts finite logits on target samples.

        Finite but huge parameters overflow the forward pass.

        Args:
            target: Target train dataset.
            source_count: Number of source domains.
        """
        samples = target.samples[:MONITOR_SAMPLES]
        if self._position is None or not len(samples):
            return
        domain_id = source_count if self.method == "msdial" else 0
        if not np.isfinite(predict(self.model, samples, domain_id)).all():
            epoch, step = self._position
            raise TrainingDivergedError("Non-finite logits", epoch=epoch, step=step)

    def _monitor(self, target: DomainDataset) -> float:
        """Entropy of target predictions, not used for training.

        Args:
            target: Target dataset.

        Returns:
            Mean entropy.
        """
        samples = target.samples[:MONITOR_SAMPLES]
        return mean_entropy(self.model, samples, 0) if len(samples) else float("nan")


def _mean(values: list[float]) -> float:
    """Mean of epoch values.

    Args:
        values: Values.

    Returns:
        Mean, NaN if empty.
    """
    return float(np.mean(values)) if values else float("nan")


def fit(
    model: ModelGraph,
    method: Method,
    cfg: ExperimentConfig,
    sources: Sequence[DomainDataset],
    target: DomainDataset,
    rng: np.random.Generator,
    epochs: Optional[int] = None,
) -> TrainingHistory:
    """Train a model.

    Args:
        model: Model.
        method: Method.
        cfg: Experiment configuration.
        sources: Labeled source datasets.
        target: Target train dataset.
        rng: Random generator.
        epochs: Epochs, the configured value if None.

    Returns:
        History.
    """
    return Trainer(model, method, cfg, rng).fit(sources, target, epochs or cfg.epochs)

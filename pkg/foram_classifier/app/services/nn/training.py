from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Generic, TypeVar

import numpy as np

from ...core.errors import TrainingDivergedError
from ...core.utils import substream
from ..dataset.batching import FeatureStreams
from .layers import ClassifierParams, loss_and_grads, one_hot, predict_proba
from .optim import make_optimizer

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    optimizer: str = "adam"
    max_epochs: int = 50
    patience: int = 3
    seed: int = 0

    @classmethod
    def from_section(cls, section, seed: int) -> "TrainConfig":
        return cls(
            batch_size=section.batch_size,
            lr=section.lr,
            optimizer=section.optimizer,
            max_epochs=section.max_epochs,
            patience=section.patience,
            seed=seed,
        )


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    initial_val_accuracy: float = 0.0
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    test_accuracy: float | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EarlyStopping(Generic[T]):
    """Track validation accuracy and remember the best snapshot.

    Training stops once ``max(patience, 1)`` consecutive epochs fail to beat
    the best accuracy seen so far (the initial accuracy counts as epoch 0).
    """

    patience: int
    best_accuracy: float
    best_state: T
    best_epoch: int = 0
    stale: int = 0

    def update(self, epoch: int, accuracy: float, snapshot: Callable[[], T]) -> bool:
        """Record ``accuracy``; return True when training should stop."""
        if accuracy > self.best_accuracy:
            self.best_accuracy = accuracy
            self.best_state = snapshot()
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= max(self.patience, 1)


def run_early_stopping(
    run_epoch: Callable[[int], float],
    val_accuracy: Callable[[], float],
    snapshot: Callable[[], T],
    restore: Callable[[T], None],
    max_epochs: int,
    patience: int,
    label: str = "train",
) -> TrainReport:
    """Shared epoch loop for head training, fine-tuning and pretraining.

    ``run_epoch(epoch)`` performs one pass over the training data and returns
    its mean loss. The best snapshot is restored before returning.
    """
    report = TrainReport()
    report.initial_val_accuracy = val_accuracy()
    stopper = EarlyStopping(patience, report.initial_val_accuracy, snapshot())
    logger.info("%s: initial val accuracy %.4f", label, report.initial_val_accuracy)

    for epoch in range(1, max_epochs + 1):
        loss = run_epoch(epoch)
        acc = val_accuracy()
        report.train_loss.append(loss)
        report.val_accuracy.append(acc)
        report.stopped_epoch = epoch
        logger.info("%s: epoch %d/%d loss=%.4f val_acc=%.4f", label, epoch, max_epochs, loss, acc)
        if stopper.update(epoch, acc, snapshot):
            logger.info("%s: early stop after epoch %d (best epoch %d)", label, epoch, stopper.best_epoch)
            break

    restore(stopper.best_state)
    report.best_epoch = stopper.best_epoch
    report.best_val_accuracy = stopper.best_accuracy
    return report


def evaluate_accuracy(params: ClassifierParams, features: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    labels = np.asarray(labels)
    if not len(labels):
        return 0.0
    preds = predict_proba(params, features, batch_size).argmax(axis=1)
    return float(np.mean(preds == labels))


def check_loss(loss: float, epoch: int, step: int) -> None:
    if not math.isfinite(loss):
        raise TrainingDivergedError(
            f"loss became non-finite ({loss}) at epoch {epoch}, step {step}; try a smaller learning rate"
        )


def train(params: ClassifierParams, streams: FeatureStreams, cfg: TrainConfig) -> TrainReport:
    """Train ``params`` in place on cached features with early stopping.

    Training views come from the feature cache: every epoch replays the same
    ``epoch_multiplicity`` augmented views per record instead of drawing fresh
    augmentations, which keeps the backbone out of the epoch loop. Joint
    training in ``backbone.finetune`` re-augments on every draw.

    On return ``params`` holds the weights with the best validation accuracy.
    """
    optimizer = make_optimizer(cfg.optimizer, cfg.lr)
    tensors = params.tensors()
    n_classes = len(params.class_names)

    def run_epoch(epoch: int) -> float:
        rng = substream(cfg.seed, "dropout", epoch)
        total, seen = 0.0, 0
        for step, (x, y) in enumerate(streams.train_batches(epoch)):
            loss, grads = loss_and_grads(params, x, one_hot(y, n_classes), mode="train", rng=rng)
            check_loss(loss, epoch, step)
            optimizer.step(tensors, grads)
            total += loss * len(y)
            seen += len(y)
        return total / max(seen, 1)

    report = run_early_stopping(
        run_epoch,
        lambda: evaluate_accuracy(params, streams.val_features, streams.val_labels),
        lambda: {k: v.copy() for k, v in tensors.items()},
        params.load_tensors,
        cfg.max_epochs,
        cfg.patience,
    )
    if streams.test_labels is not None and len(streams.test_labels):
        report.test_accuracy = evaluate_accuracy(params, streams.test_features, streams.test_labels)
    report.config = asdict(cfg)
    return report

"""Hyperparameter grid over head widths, dropout rate and optimizer."""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import pandas as pd

from ...core.config import CLASS_NAMES, GridConfig
from ...core.errors import EmptyGridError
from ...core.utils import substream
from ..dataset.batching import FeatureStreams
from .layers import ClassifierParams
from .training import TrainConfig, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridEntry:
    hidden: tuple[int, ...]
    dropout_rate: float
    optimizer: str

    @property
    def label(self) -> str:
        widths = "x".join(str(h) for h in self.hidden)
        return f"{widths}/p={self.dropout_rate}/{self.optimizer}"


@dataclass(frozen=True)
class GridResult:
    entry: GridEntry
    best_val_accuracy: float
    n_parameters: int
    order: int
    seed: int
    stopped_epoch: int


def default_grid(cfg: GridConfig | None = None) -> list[GridEntry]:
    """Cartesian product of first widths, second widths, dropout rates and optimizers."""
    cfg = cfg or GridConfig()
    return [
        GridEntry((w1, w2), p, opt)
        for w1, w2, p, opt in itertools.product(
            cfg.widths_first, cfg.widths_second, cfg.dropout_rates, cfg.optimizers
        )
    ]


def entry_seed(seed: int, order: int) -> int:
    return int(substream(seed, "grid", order).integers(2**31 - 1))


def _train_entry(args) -> GridResult:
    entry, order, streams, settings, class_names = args
    seed = entry_seed(settings.seed, order)
    params = ClassifierParams.initialize(
        input_dim=streams.feature_dim,
        hidden=entry.hidden,
        dropout_rate=entry.dropout_rate,
        seed=seed,
        class_names=class_names,
    )
    cfg = TrainConfig(
        batch_size=settings.batch_size,
        lr=settings.lr,
        optimizer=entry.optimizer,
        max_epochs=settings.max_epochs,
        patience=settings.patience,
        seed=seed,
    )
    report = train(params, streams, cfg)
    logger.info("grid %d %s: best val accuracy %.4f", order, entry.label, report.best_val_accuracy)
    return GridResult(entry, report.best_val_accuracy, params.n_parameters(), order, seed, report.stopped_epoch)


def grid_search(
    grid: Sequence[GridEntry],
    streams: FeatureStreams,
    settings: TrainConfig = TrainConfig(max_epochs=5),
    class_names: Sequence[str] = CLASS_NAMES,
    workers: int = 1,
) -> list[GridResult]:
    """Train every grid entry with a reduced epoch budget and rank the results.

    Entries are sorted by validation accuracy (descending), then by parameter
    count, then by grid order. Each entry gets its own seed derived from
    ``settings.seed`` and its position, so the ranking does not depend on
    ``workers``.
    """
    if not grid:
        raise EmptyGridError("grid search needs at least one configuration")
    jobs = [(entry, i, streams, settings, list(class_names)) for i, entry in enumerate(grid)]
    logger.info("Grid search over %d configurations with %d worker(s)", len(jobs), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_entry, jobs))
    else:
        results = [_train_entry(job) for job in jobs]
    return sorted(results, key=lambda r: (-r.best_val_accuracy, r.n_parameters, r.order))


def results_frame(results: Sequence[GridResult]) -> pd.DataFrame:
    rows = []
    for rank, r in enumerate(results, start=1):
        rows.append({
            "rank": rank,
            "order": r.order,
            "hidden": "x".join(str(h) for h in r.entry.hidden),
            "dropout_rate": r.entry.dropout_rate,
            "optimizer": r.entry.optimizer,
            "best_val_accuracy": r.best_val_accuracy,
            "n_parameters": r.n_parameters,
            "stopped_epoch": r.stopped_epoch,
            "seed": r.seed,
        })
    return pd.DataFrame(rows)

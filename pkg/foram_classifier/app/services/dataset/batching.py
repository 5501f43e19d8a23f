from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from ...core.errors import EmptySplitError
from ...core.utils import read_png, substream
from .augment import AugmentConfig, augment_pixels
from .manifest import DatasetManifest

logger = logging.getLogger(__name__)

Batch = tuple[np.ndarray, np.ndarray]


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Generator owning the shuffle and augmentation draws of one epoch."""
    return substream(seed, "shuffle", epoch)


def load_split_images(
    manifest: DatasetManifest,
    split: str,
    loader: Callable = read_png,
) -> tuple[np.ndarray, np.ndarray]:
    records = manifest.split_records(split)
    if not records:
        raise EmptySplitError(f"split {split!r} has no records")
    images = np.stack([loader(manifest.resolve(r)) for r in records])
    return images, manifest.labels(split)


def batches(
    manifest: DatasetManifest,
    split: str,
    batch_size: int = 32,
    epoch_multiplicity: int = 1,
    rng: np.random.Generator | None = None,
    augment_cfg: AugmentConfig | None = None,
    loader: Callable = read_png,
    images: np.ndarray | None = None,
) -> Iterator[Batch]:
    """Yield ``(images, labels)`` batches over one epoch of ``split``.

    Training batches visit every record ``epoch_multiplicity`` times in
    shuffled order and augment each sampled image independently; val/test
    batches come in manifest order without augmentation. The last partial
    batch is kept. ``images`` may hold the split's preloaded pixels.
    """
    if images is None:
        images, labels = load_split_images(manifest, split, loader)
    else:
        labels = manifest.labels(split)
        if not len(labels):
            raise EmptySplitError(f"split {split!r} has no records")
    n = len(labels)
    order = np.tile(np.arange(n), epoch_multiplicity)

    training = split == "train"
    if training:
        if rng is None:
            raise ValueError("training batches need a random generator")
        augment_cfg = augment_cfg or AugmentConfig()
        order = rng.permutation(order)
        # one seed per sample, drawn up front so content never depends on consumption order
        sample_seeds = rng.integers(0, 2**63 - 1, size=len(order))

    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if training:
            batch = np.stack([
                augment_pixels(images[i], augment_cfg, np.random.default_rng(int(s)))
                for i, s in zip(idx, sample_seeds[start:start + batch_size])
            ])
        else:
            batch = images[idx]
        batch.setflags(write=False)
        yield batch, labels[idx]


def steps_per_epoch(n_records: int, batch_size: int = 32, epoch_multiplicity: int = 1) -> int:
    return -(-n_records * epoch_multiplicity // batch_size)


_DONE = object()


def prefetch(stream: Iterable, depth: int = 2) -> Iterator:
    """Produce items of ``stream`` on a background thread, at most ``depth`` ahead."""
    buf: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def _produce():
        try:
            for item in stream:
                if stop.is_set():
                    return
                buf.put(item)
        except BaseException as exc:  # re-raised in the consumer
            buf.put(exc)
            return
        buf.put(_DONE)

    worker = threading.Thread(target=_produce, name="batch-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = buf.get()
            if item is _DONE:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        # unblock a producer waiting on a full queue
        while worker.is_alive():
            try:
                buf.get_nowait()
            except queue.Empty:
                worker.join(timeout=0.05)


@dataclass
class FeatureStreams:
    """Cached backbone features for head training.

    ``train_views`` has shape ``(views, n_train, dim)``; pass ``k`` of an epoch
    uses view ``k % views``. The same views are replayed every epoch.
    """

    train_views: np.ndarray
    train_labels: np.ndarray
    val_features: np.ndarray
    val_labels: np.ndarray
    test_features: np.ndarray | None = None
    test_labels: np.ndarray | None = None
    batch_size: int = 32
    epoch_multiplicity: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.train_views.ndim != 3 or self.train_views.shape[1] == 0:
            raise EmptySplitError("training features are empty")
        if not len(self.val_labels):
            raise EmptySplitError("validation features are empty")

    @property
    def feature_dim(self) -> int:
        return int(self.train_views.shape[2])

    def steps(self) -> int:
        return steps_per_epoch(self.train_views.shape[1], self.batch_size, self.epoch_multiplicity)

    def train_batches(self, epoch: int) -> Iterator[Batch]:
        views, n, _ = self.train_views.shape
        rng = epoch_rng(self.seed, epoch)
        view_of = np.repeat(np.arange(self.epoch_multiplicity) % views, n)
        record_of = np.tile(np.arange(n), self.epoch_multiplicity)
        perm = rng.permutation(len(record_of))
        view_of, record_of = view_of[perm], record_of[perm]
        for start in range(0, len(perm), self.batch_size):
            v = view_of[start:start + self.batch_size]
            r = record_of[start:start + self.batch_size]
            yield self.train_views[v, r].astype(np.float64), self.train_labels[r]

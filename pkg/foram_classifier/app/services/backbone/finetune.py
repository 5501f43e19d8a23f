"""Joint training of the builtin backbone and the classification head.

``finetune`` unfreezes selected late blocks of a trained SmallConvNet and
continues training at a very small backbone learning rate while the head
keeps its own rate. ``pretrain_builtin`` trains every block from scratch and
produces the checkpoint the other commands start from.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ...core.config import CLASS_NAMES
from ...core.errors import ParameterError, UnsupportedOperationError
from ...core.utils import read_png, substream
from ..dataset.augment import AugmentConfig
from ..dataset.batching import batches, epoch_rng, load_split_images, prefetch
from ..dataset.manifest import DatasetManifest
from ..nn.layers import ClassifierParams, loss_and_grads, one_hot, predict_proba
from ..nn.optim import Adam
from ..nn.training import TrainReport, check_loss, run_early_stopping
from .convnet import SmallConvNet
from .handle import BUILTIN, PRETRAINED, BackboneHandle, builtin_handle, preprocess

logger = logging.getLogger(__name__)

EVAL_BATCH = 32


@dataclass(frozen=True)
class JointConfig:
    backbone_lr: float = 1e-7
    head_lr: float = 1e-4
    max_epochs: int = 10
    patience: int = 3
    batch_size: int = 32
    trainable_blocks: tuple[int, ...] = (4, 5)
    epoch_multiplicity: int = 1
    seed: int = 0

    @classmethod
    def for_finetune(cls, section, batch_size: int, seed: int) -> "JointConfig":
        return cls(
            backbone_lr=section.backbone_lr * section.lr_scale,
            head_lr=section.head_lr,
            max_epochs=section.max_epochs,
            patience=section.patience,
            batch_size=batch_size,
            trainable_blocks=tuple(section.trainable_blocks),
            seed=seed,
        )


@dataclass
class FinetuneResult:
    report: TrainReport
    handle: BackboneHandle
    head: ClassifierParams


def weights_digest(net: SmallConvNet) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(net.tensors().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _features(net: SmallConvNet, images: np.ndarray) -> np.ndarray:
    return np.concatenate([
        net.forward(preprocess(images[s:s + EVAL_BATCH], BUILTIN)) for s in range(0, len(images), EVAL_BATCH)
    ])


def split_accuracy(net: SmallConvNet, head: ClassifierParams, images: np.ndarray, labels: np.ndarray) -> float:
    if not len(labels):
        return 0.0
    return float(np.mean(predict_proba(head, _features(net, images)).argmax(axis=1) == labels))


def _joint_train(
    net: SmallConvNet,
    head: ClassifierParams,
    manifest: DatasetManifest,
    cfg: JointConfig,
    augment_cfg: AugmentConfig,
    loader,
    label: str,
) -> TrainReport:
    blocks = sorted(set(cfg.trainable_blocks))
    if any(b < 1 or b > len(net.blocks) for b in blocks):
        raise ParameterError(f"trainable blocks must lie in 1..{len(net.blocks)}, got {blocks}")
    first = blocks[0] if blocks else None
    backbone_params = net.block_tensors(blocks)
    head_params = head.tensors()
    backbone_opt = Adam(lr=cfg.backbone_lr)
    head_opt = Adam(lr=cfg.head_lr)
    n_classes = len(head.class_names)

    train_images, _ = load_split_images(manifest, "train", loader)
    val_images, val_labels = load_split_images(manifest, "val", loader)

    def run_epoch(epoch: int) -> float:
        dropout_rng = substream(cfg.seed, "dropout", epoch)
        stream = batches(
            manifest,
            "train",
            cfg.batch_size,
            cfg.epoch_multiplicity,
            rng=epoch_rng(cfg.seed, epoch),
            augment_cfg=augment_cfg,
            images=train_images,
        )
        total, seen = 0.0, 0
        for step, (px, y) in enumerate(prefetch(stream)):
            x = preprocess(px, BUILTIN)
            if first is None:
                feats = net.forward(x)
            else:
                feats, cache = net.forward(x, cache_from=first)
            loss, head_grads, dfeats = loss_and_grads(
                head, feats, one_hot(y, n_classes), mode="train", rng=dropout_rng, return_input_grad=True
            )
            check_loss(loss, epoch, step)
            if first is not None:
                backbone_opt.step(backbone_params, net.backward(cache, dfeats))
            head_opt.step(head_params, head_grads)
            total += loss * len(y)
            seen += len(y)
        return total / max(seen, 1)

    def snapshot():
        return (
            {k: v.copy() for k, v in backbone_params.items()},
            {k: v.copy() for k, v in head_params.items()},
        )

    def restore(state):
        net.load_tensors(state[0])
        head.load_tensors(state[1])

    report = run_early_stopping(
        run_epoch,
        lambda: split_accuracy(net, head, val_images, val_labels),
        snapshot,
        restore,
        cfg.max_epochs,
        cfg.patience,
        label=label,
    )
    if manifest.split_records("test"):
        test_images, test_labels = load_split_images(manifest, "test", loader)
        report.test_accuracy = split_accuracy(net, head, test_images, test_labels)
    report.config = {**asdict(cfg), "trainable_blocks": blocks}
    return report


def finetune(
    handle: BackboneHandle,
    head: ClassifierParams,
    manifest: DatasetManifest,
    cfg: JointConfig = JointConfig(),
    augment_cfg: AugmentConfig | None = None,
    loader=read_png,
) -> FinetuneResult:
    """Jointly train ``cfg.trainable_blocks`` of the builtin backbone and the head.

    The inputs are left untouched; the result carries tuned copies. Blocks
    outside ``trainable_blocks`` keep bit-identical weights.
    """
    if handle.kind == PRETRAINED:
        raise UnsupportedOperationError(
            "fine-tuning needs the builtin backbone; the pretrained interchange backbone is inference-only"
        )
    net = handle.model.copy()
    head = head.copy()
    report = _joint_train(net, head, manifest, cfg, augment_cfg or AugmentConfig(), loader, "finetune")
    tuned = builtin_handle(
        net, f"{BUILTIN}:{weights_digest(net)}", cfg.trainable_blocks, source=handle.source
    )
    return FinetuneResult(report, tuned, head)


def pretrain_builtin(
    manifest: DatasetManifest,
    cfg: JointConfig,
    hidden: Sequence[int] = (512, 64),
    dropout_rate: float = 0.5,
    augment_cfg: AugmentConfig | None = None,
    class_names: Sequence[str] = CLASS_NAMES,
    loader=read_png,
) -> tuple[SmallConvNet, ClassifierParams, TrainReport]:
    """Train a fresh SmallConvNet and head end to end on image batches."""
    net = SmallConvNet.initialize(cfg.seed)
    head = ClassifierParams.initialize(
        input_dim=net.feature_dim(), hidden=hidden, dropout_rate=dropout_rate, seed=cfg.seed, class_names=class_names
    )
    all_blocks = JointConfig(**{**asdict(cfg), "trainable_blocks": tuple(range(1, len(net.blocks) + 1))})
    report = _joint_train(net, head, manifest, all_blocks, augment_cfg or AugmentConfig(), loader, "pretrain")
    return net, head, report

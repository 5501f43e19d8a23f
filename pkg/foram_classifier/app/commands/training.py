from __future__ import annotations

import logging

from ..core.utils import write_frame, write_json
from ..services.backbone.features import build_feature_streams
from ..services.backbone.finetune import JointConfig, finetune, pretrain_builtin
from ..services.backbone.handle import BUILTIN, save_builtin
from ..services.nn.checkpoint import save_head
from ..services.nn.grid import default_grid, grid_search, results_frame
from ..services.nn.layers import ClassifierParams
from ..services.nn.training import TrainConfig, train
from .common import RunContext, open_backbone, open_head, open_manifest

logger = logging.getLogger(__name__)


def _fmt(acc) -> str:
    return "n/a" if acc is None else f"{acc:.4f}"


def _streams(ctx: RunContext, handle, manifest):
    t = ctx.cfg.training
    return build_feature_streams(
        handle,
        manifest,
        ctx.augment,
        cache_dir=ctx.cache_dir,
        batch_size=t.batch_size,
        epoch_multiplicity=t.epoch_multiplicity,
        seed=ctx.cfg.seed,
    )


def cmd_train(ctx: RunContext) -> dict:
    """Train the classification head on cached backbone features."""
    manifest = open_manifest(ctx)
    handle = open_backbone(ctx, create_missing=True)
    streams = _streams(ctx, handle, manifest)
    t = ctx.cfg.training
    params = ClassifierParams.initialize(
        input_dim=streams.feature_dim,
        hidden=t.hidden,
        dropout_rate=t.dropout_rate,
        seed=ctx.cfg.seed,
        class_names=ctx.cfg.class_names,
    )
    report = train(params, streams, TrainConfig.from_section(t, ctx.cfg.seed))
    save_head(ctx.head_path, params, backbone=handle.digest, backbone_kind=handle.kind)

    payload = {**report.to_dict(), "backbone": handle.digest, "feature_dim": streams.feature_dim}
    write_json(ctx.artifact("train_report.json"), payload)
    print(
        f"train: best val accuracy {_fmt(report.best_val_accuracy)} (epoch {report.best_epoch}),"
        f" test accuracy {_fmt(report.test_accuracy)}"
    )
    return payload


def cmd_gridsearch(ctx: RunContext) -> dict:
    """Rank head configurations by validation accuracy."""
    manifest = open_manifest(ctx)
    handle = open_backbone(ctx, create_missing=True)
    streams = _streams(ctx, handle, manifest)
    t = ctx.cfg.training
    settings = TrainConfig(
        batch_size=t.batch_size,
        lr=t.lr,
        max_epochs=ctx.cfg.grid.max_epochs,
        patience=t.patience,
        seed=ctx.cfg.seed,
    )
    results = grid_search(
        default_grid(ctx.cfg.grid), streams, settings, ctx.cfg.class_names, workers=ctx.cfg.workers
    )
    frame = results_frame(results)
    write_frame(ctx.artifact("grid_search.csv"), frame)
    best = results[0]
    print(f"grid-search: {len(results)} configurations; best {best.entry.label} "
          f"val accuracy {_fmt(best.best_val_accuracy)}")
    print(frame.head(10).to_string(index=False))
    return {"configurations": len(results), "best": best.entry.label}


def cmd_pretrain(ctx: RunContext) -> dict:
    """Train the builtin backbone from scratch and save it as the base checkpoint."""
    manifest = open_manifest(ctx)
    p, t = ctx.cfg.pretrain, ctx.cfg.training
    cfg = JointConfig(
        backbone_lr=p.lr,
        head_lr=p.lr,
        max_epochs=p.max_epochs,
        patience=p.patience,
        batch_size=t.batch_size,
        seed=ctx.cfg.seed,
    )
    net, _, report = pretrain_builtin(
        manifest, cfg, t.hidden, t.dropout_rate, ctx.augment, ctx.cfg.class_names
    )
    save_builtin(ctx.backbone_path, net, seed=ctx.cfg.seed, trained=True)
    payload = report.to_dict()
    write_json(ctx.artifact("pretrain_report.json"), payload)
    print(f"pretrain-backbone: best val accuracy {_fmt(report.best_val_accuracy)}, "
          f"test accuracy {_fmt(report.test_accuracy)} -> {ctx.backbone_path}")
    return payload


def cmd_finetune(ctx: RunContext) -> dict:
    """Unfreeze the configured builtin blocks and train them jointly with the head."""
    manifest = open_manifest(ctx)
    handle = open_backbone(ctx)
    head, meta = open_head(ctx)
    if meta.get("backbone") not in (None, handle.digest):
        logger.warning("Head %s was trained on backbone %s, not %s", ctx.head_path, meta["backbone"], handle.digest)
    cfg = JointConfig.for_finetune(ctx.cfg.finetune, ctx.cfg.training.batch_size, ctx.cfg.seed)
    result = finetune(handle, head, manifest, cfg, ctx.augment)

    save_builtin(ctx.finetuned_backbone_path, result.handle.model, seed=ctx.cfg.seed, base=handle.digest)
    save_head(ctx.finetuned_head_path, result.head, backbone=result.handle.digest, backbone_kind=BUILTIN)
    payload = result.report.to_dict()
    write_json(ctx.artifact("finetune_report.json"), payload)
    print(
        f"finetune: val accuracy {_fmt(result.report.initial_val_accuracy)} -> "
        f"{_fmt(result.report.best_val_accuracy)}, test accuracy {_fmt(result.report.test_accuracy)}"
    )
    return payload

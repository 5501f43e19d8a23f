from __future__ import annotations

import logging
from collections import Counter

from ..core.errors import DimensionError, EmptySplitError
from ..core.utils import write_frame, write_json
from ..services import report_generator as reports
from ..services.backbone.features import split_features
from ..services.nn.layers import predict_proba
from ..services.uncertainty import CONFIDENT_WRONG, OK, UNCERTAIN, flag_difficult, mc_predict, mc_statistics, summarize
from .common import RunContext, check_class_names, open_backbone, open_head, open_manifest

logger = logging.getLogger(__name__)


def _load_split(ctx: RunContext, split: str, finetuned: bool):
    manifest = open_manifest(ctx)
    records = manifest.split_records(split)
    if not records:
        raise EmptySplitError(f"split {split!r} has no records")
    backbone_path = ctx.finetuned_backbone_path if finetuned else ctx.backbone_path
    head_path = ctx.finetuned_head_path if finetuned else ctx.head_path
    head, _ = open_head(ctx, head_path)
    check_class_names(manifest.class_names, head.class_names, "checkpoint")
    handle = open_backbone(ctx, path=backbone_path)
    if handle.feature_dim != head.input_dim:
        raise DimensionError(
            f"backbone produces {handle.feature_dim} features but the head expects {head.input_dim}"
        )
    features = split_features(handle, manifest, split, ctx.cache_dir)
    ids = [r.image_path for r in records]
    return manifest, head, features, manifest.labels(split), ids


def cmd_evaluate(ctx: RunContext, split: str = "test", finetuned: bool = False) -> dict:
    """Accuracy and confusion matrix of the saved head on one split."""
    manifest, head, features, labels, _ = _load_split(ctx, split, finetuned)
    predictions = predict_proba(head, features).argmax(axis=1)
    confusion = reports.confusion_frame(labels, predictions, manifest.class_names)
    summary = reports.evaluation_summary(labels, predictions, manifest.class_names)
    summary.update(split=split, finetuned=finetuned)

    write_json(ctx.artifact("evaluation.json"), summary)
    write_frame(ctx.artifact("confusion.csv"), confusion.reset_index())
    print(f"evaluate: {split} accuracy {summary['accuracy']:.4f} over {summary['n']} specimens")
    print(reports.format_confusion(confusion))
    return summary


def cmd_mcdropout(ctx: RunContext, split: str = "test", finetuned: bool = False) -> dict:
    """MC dropout analysis report, histogram tables and difficult cases."""
    manifest, head, features, labels, ids = _load_split(ctx, split, finetuned)
    mc = ctx.cfg.mc
    run = mc_predict(head, features, mc.passes, ctx.cfg.seed)
    summary = summarize(run)
    flags = flag_difficult(summary, labels, mc.confidence, mc.margin)
    names = manifest.class_names

    frame = reports.analysis_frame(ids, summary, flags, names, labels)
    write_frame(ctx.artifact("mc_report.csv"), frame)
    write_json(ctx.artifact("mc_report.json"), reports.analysis_records(frame, names))
    write_frame(ctx.artifact("mc_histograms.csv"), reports.histogram_frame(run, names, mc.hist_bins))

    difficult = reports.difficult_cases(frame)
    write_frame(ctx.artifact("difficult_cases.csv"), difficult)
    flagged = [i for i, f in enumerate(flags) if f != OK]
    write_frame(
        ctx.artifact("mc_specimen_histograms.csv"),
        reports.specimen_histogram_frame(run, flagged, ids, names, mc.hist_bins),
    )

    stats = mc_statistics(run, summary, labels)
    counts = Counter(flags.tolist())
    stats.update(
        split=split,
        finetuned=finetuned,
        seed=ctx.cfg.seed,
        flags={f: counts.get(f, 0) for f in (OK, UNCERTAIN, CONFIDENT_WRONG)},
    )
    write_json(ctx.artifact("mc_summary.json"), stats)
    print(
        f"mc-dropout: {len(ids)} specimens x {run.n_passes} passes; single-pass accuracy "
        f"{stats['single_pass_accuracy_mean']:.4f} +/- {stats['single_pass_accuracy_std']:.4f}, "
        f"majority vote {stats['majority_vote_accuracy']:.4f}"
    )
    print(f"flags: {stats['flags']}")
    return stats

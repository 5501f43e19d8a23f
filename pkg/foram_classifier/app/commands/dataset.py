from __future__ import annotations

import logging

from ..core.utils import require
from ..services.dataset.manifest import class_counts, ingest_directory, save_manifest, stratified_split
from .common import RunContext

logger = logging.getLogger(__name__)


def cmd_split(ctx: RunContext) -> dict:
    """Ingest ``paths.data`` and write a stratified train/val/test manifest."""
    data_dir = require(ctx.data_dir, "specimen data directory")
    manifest = ingest_directory(data_dir, ctx.cfg.class_names, ctx.cfg.seed, root=ctx.out)
    split = stratified_split(manifest, ctx.cfg.split.fractions(), ctx.cfg.seed)
    save_manifest(split, ctx.manifest_path)

    table = class_counts(split)
    logger.info("Wrote manifest with %d records to %s", len(split.records), ctx.manifest_path)
    print(f"split: {len(split.records)} records -> {ctx.manifest_path}")
    print(table.to_string())
    return {"records": len(split.records), "counts": table.to_dict(orient="index")}

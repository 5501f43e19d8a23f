from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..core.config import DetectionConfig
from ..core.errors import ArtifactMissingError, PipelineError
from ..core.utils import write_jsonl
from ..services.dataset.synthetic import write_benchmark
from ..services.imaging.detector import detect_specimens, load_plate, save_specimens
from .common import RunContext

logger = logging.getLogger(__name__)


def cmd_synth(ctx: RunContext) -> dict:
    """Render the synthetic benchmark into ``paths.plates``."""
    s = ctx.cfg.synth
    rows = write_benchmark(
        ctx.plates_dir,
        ctx.cfg.seed,
        plates_per_class=s.plates_per_class,
        blobs_per_plate=s.blobs_per_plate,
        height=s.plate_height,
        width=s.plate_width,
        min_area=s.min_area,
        max_area=s.max_area,
        border_width=s.border_width,
        class_names=ctx.cfg.class_names,
    )
    summary = {
        "plates": s.plates_per_class * len(ctx.cfg.class_names),
        "blobs": len(rows),
        "out": str(ctx.plates_dir),
    }
    print(f"synth: wrote {summary['plates']} plates with {summary['blobs']} blobs to {summary['out']}")
    return summary


def plate_files(plate_dir: Path) -> list[tuple[Path, str | None]]:
    """PNG plates in ``plate_dir`` and its class sub-directories, with the class (or None)."""
    found = [(p, None) for p in sorted(plate_dir.glob("*.png"))]
    for sub in sorted(p for p in plate_dir.iterdir() if p.is_dir()):
        found.extend((p, sub.name) for p in sorted(sub.glob("*.png")))
    return found


def _extract_plate(path: Path, label: str | None, data_dir: Path, cfg: DetectionConfig) -> list[dict]:
    plate = load_plate(path)
    out_dir = data_dir / label if label else data_dir
    records = save_specimens(detect_specimens(plate, cfg), out_dir)
    for rec in records:
        rec["file"] = f"{label}/{rec['file']}" if label else rec["file"]
        rec["label"] = label
    return records


def cmd_extract(ctx: RunContext, plate_dir: Path | None = None, out_dir: Path | None = None) -> dict:
    """Detect specimens on every plate and write 224x224 crops plus JSON-lines records.

    Plates that cannot be read or processed are skipped with a warning; the
    command fails only when every plate fails.
    """
    plate_dir = Path(plate_dir) if plate_dir is not None else ctx.plates_dir
    out_dir = Path(out_dir) if out_dir is not None else ctx.data_dir
    if not plate_dir.is_dir():
        raise ArtifactMissingError(f"plate directory not found: {plate_dir}")
    plates = plate_files(plate_dir)
    if not plates:
        logger.warning("No PNG plates found in %s", plate_dir)

    records: list[dict] = []
    successes: list[str] = []
    failures: dict[str, str] = {}

    def record_failure(path: Path, exc: BaseException):
        failures[str(path)] = str(exc)
        logger.warning("Skipping plate %s: %s", path, exc)

    if ctx.cfg.workers > 1 and len(plates) > 1:
        with ProcessPoolExecutor(max_workers=ctx.cfg.workers) as pool:
            futures = [
                (path, pool.submit(_extract_plate, path, label, out_dir, ctx.cfg.detection))
                for path, label in plates
            ]
            for path, fut in futures:
                try:
                    records.extend(fut.result())
                    successes.append(str(path))
                except Exception as exc:
                    record_failure(path, exc)
    else:
        for path, label in plates:
            try:
                records.extend(_extract_plate(path, label, out_dir, ctx.cfg.detection))
                successes.append(str(path))
            except Exception as exc:
                logger.debug("Plate %s failed", path, exc_info=True)
                record_failure(path, exc)

    if plates and not successes:
        raise PipelineError(f"all {len(plates)} plates failed; first error: {next(iter(failures.values()))}")

    write_jsonl(out_dir / "detections.jsonl", records)
    summary = {
        "plates": len(plates),
        "processed": len(successes),
        "failed": failures,
        "specimens": len(records),
    }
    logger.info("Extraction summary: %s", summary)
    print(
        f"extract: {summary['specimens']} specimens from {summary['processed']}/{summary['plates']} plates"
        f" ({len(failures)} skipped) -> {out_dir}"
    )
    return summary

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from ...core.config import CLASS_NAMES
from ...core.errors import ArtifactMissingError, StratificationError, ValidationError
from ...core.utils import substream, write_json

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class SpecimenRecord:
    image_path: str
    label: str
    split: str = UNASSIGNED

    def __post_init__(self):
        if self.split not in (*SPLITS, UNASSIGNED):
            raise ValidationError(f"unknown split {self.split!r} for {self.image_path}")


@dataclass
class DatasetManifest:
    records: list[SpecimenRecord]
    seed: int = 0
    class_names: list[str] = field(default_factory=lambda: list(CLASS_NAMES))
    # Directory relative image paths resolve against; not serialized.
    root: Path | None = None

    def __post_init__(self):
        if len(self.class_names) != 4:
            raise ValidationError(f"class_names must have length 4, got {self.class_names}")
        known = set(self.class_names)
        bad = sorted({r.label for r in self.records if r.label not in known})
        if bad:
            raise ValidationError(f"records carry labels outside class_names: {bad}")

    def split_records(self, split: str) -> list[SpecimenRecord]:
        return [r for r in self.records if r.split == split]

    def class_index(self, label: str) -> int:
        return self.class_names.index(label)

    def labels(self, split: str) -> np.ndarray:
        return np.array([self.class_index(r.label) for r in self.split_records(split)], dtype=np.int64)

    def resolve(self, record: SpecimenRecord) -> Path:
        p = Path(record.image_path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "seed": self.seed,
            "records": [
                {"path": r.image_path, "label": r.label, "split": r.split} for r in self.records
            ],
        }

    def digest(self, split: str | None = None) -> str:
        rows = self.records if split is None else self.split_records(split)
        payload = {
            "class_names": self.class_names,
            "records": [[r.image_path, r.label, r.split] for r in rows],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict, root: Path | None = None) -> "DatasetManifest":
        try:
            records = [
                SpecimenRecord(image_path=r["path"], label=r["label"], split=r.get("split", UNASSIGNED))
                for r in data["records"]
            ]
            return cls(records=records, seed=int(data["seed"]), class_names=list(data["class_names"]), root=root)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"manifest is missing field {exc}") from exc


def save_manifest(manifest: DatasetManifest, path: Path) -> Path:
    return write_json(path, manifest.to_dict())


def load_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ArtifactMissingError(f"manifest not found at {path}; run `split` first")
    return DatasetManifest.from_dict(json.loads(path.read_text()), root=path.parent)


def ingest_directory(
    data_dir: Path,
    class_names: Sequence[str] = CLASS_NAMES,
    seed: int = 0,
    root: Path | None = None,
) -> DatasetManifest:
    """Build an unassigned manifest from ``data_dir/<class_name>/*.png``.

    Paths are stored relative to ``root`` when the images live under it.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ArtifactMissingError(f"data directory not found: {data_dir}")
    records = []
    for sub in sorted(p for p in data_dir.iterdir() if p.is_dir()):
        if sub.name not in class_names:
            logger.warning("Skipping directory %s: not one of %s", sub.name, list(class_names))
            continue
        for img in sorted(sub.glob("*.png")):
            stored = img
            if root is not None:
                try:
                    stored = img.resolve().relative_to(Path(root).resolve())
                except ValueError:
                    stored = img.resolve()
            records.append(SpecimenRecord(image_path=stored.as_posix(), label=sub.name))
    logger.info("Ingested %d specimen images from %s", len(records), data_dir)
    return DatasetManifest(records=records, seed=seed, class_names=list(class_names), root=root)


def split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    """Floor-based counts; the remainder goes one each to train, val, test in turn."""
    counts = [int(math.floor(f * n + 1e-9)) for f in fractions]
    remainder = n - sum(counts)
    i = 0
    while remainder > 0:
        counts[i % len(counts)] += 1
        remainder -= 1
        i += 1
    return counts


def stratified_split(
    manifest: DatasetManifest,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int | None = None,
) -> DatasetManifest:
    """Assign every record to train/val/test preserving per-class proportions."""
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9) or len(fractions) != 3:
        raise StratificationError(f"fractions must be three values summing to 1, got {fractions}")
    seed = manifest.seed if seed is None else seed
    assigned = [r for r in manifest.records if r.split != UNASSIGNED]
    if assigned:
        raise StratificationError(f"{len(assigned)} records already carry a split assignment")

    by_class: dict[str, list[int]] = {c: [] for c in manifest.class_names}
    for i, rec in enumerate(manifest.records):
        by_class[rec.label].append(i)
    too_small = {c: len(ix) for c, ix in by_class.items() if 0 < len(ix) < 3}
    if too_small:
        raise StratificationError(f"classes need at least 3 records to stratify: {too_small}")

    new_split = [UNASSIGNED] * len(manifest.records)
    for class_id, (cls, idx) in enumerate(by_class.items()):
        if not idx:
            logger.warning("Class %s has no records", cls)
            continue
        order = np.asarray(idx)[substream(seed, "split", class_id).permutation(len(idx))]
        n_train, n_val, _ = split_counts(len(idx), fractions)
        for pos, rec_i in enumerate(order):
            if pos < n_train:
                new_split[rec_i] = "train"
            elif pos < n_train + n_val:
                new_split[rec_i] = "val"
            else:
                new_split[rec_i] = "test"

    records = [replace(r, split=s) for r, s in zip(manifest.records, new_split)]
    return DatasetManifest(records=records, seed=seed, class_names=list(manifest.class_names), root=manifest.root)


def class_counts(manifest: DatasetManifest) -> pd.DataFrame:
    """Class x split count table (rows in class_names order)."""
    counter = Counter((r.label, r.split) for r in manifest.records)
    columns = [s for s in (*SPLITS, UNASSIGNED) if any(k[1] == s for k in counter)] or list(SPLITS)
    table = pd.DataFrame(
        [[counter.get((c, s), 0) for s in columns] for c in manifest.class_names],
        index=pd.Index(manifest.class_names, name="class"),
        columns=columns,
    )
    table["total"] = table.sum(axis=1)
    return table

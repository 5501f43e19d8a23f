"""On-disk cache of backbone features per split.

Validation and test features are extracted once from the plain crops. The
training split stores ``views`` independently augmented copies of every
record; pass ``k`` of an epoch trains on view ``k % views``. Every cache file
is keyed by the backbone digest, the split's records and, for training, the
augmentation settings, view count and seed.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ...core.utils import load_arrays, read_png, save_arrays, substream
from ..dataset.augment import AugmentConfig, augment_pixels
from ..dataset.batching import FeatureStreams
from ..dataset.manifest import DatasetManifest
from .handle import EXTRACT_BATCH, BackboneHandle, extract_features

logger = logging.getLogger(__name__)

CACHE_KIND = "feature_cache"


def cache_key(
    handle: BackboneHandle,
    manifest: DatasetManifest,
    split: str,
    augment_cfg: AugmentConfig | None = None,
    views: int = 1,
    seed: int = 0,
) -> str:
    payload = {
        "backbone": handle.digest,
        "records": manifest.digest(split),
        "split": split,
    }
    if augment_cfg is not None:
        payload.update(augment=asdict(augment_cfg), views=views, seed=seed)
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _extract_records(handle, manifest, records, loader, transform=None) -> np.ndarray:
    chunks = []
    for s in range(0, len(records), EXTRACT_BATCH):
        chunk = records[s:s + EXTRACT_BATCH]
        pixels = []
        for offset, rec in enumerate(chunk):
            px = loader(manifest.resolve(rec))
            pixels.append(transform(s + offset, px) if transform else px)
        chunks.append(extract_features(handle, np.stack(pixels)).astype(np.float32))
    return np.concatenate(chunks) if chunks else np.zeros((0, handle.feature_dim), dtype=np.float32)


def split_features(
    handle: BackboneHandle,
    manifest: DatasetManifest,
    split: str,
    cache_dir: Path | None = None,
    augment_cfg: AugmentConfig | None = None,
    views: int = 1,
    seed: int = 0,
    loader=read_png,
) -> np.ndarray:
    """Features for ``split``: ``(n, dim)``, or ``(views, n, dim)`` when ``augment_cfg`` is given."""
    key = cache_key(handle, manifest, split, augment_cfg, views, seed)
    path = Path(cache_dir) / f"{split}-{key[:16]}.npz" if cache_dir is not None else None
    if path is not None and path.is_file():
        arrays, meta = load_arrays(path)
        if meta.get("key") == key:
            logger.info("Feature cache hit for %s split (%s)", split, path.name)
            return arrays["features"]

    records = manifest.split_records(split)
    logger.info("Extracting %s features for %d %s records", handle.kind, len(records), split)
    if augment_cfg is None:
        features = _extract_records(handle, manifest, records, loader)
    else:
        features = np.stack([
            _extract_records(
                handle,
                manifest,
                records,
                loader,
                lambda i, px, v=v: augment_pixels(px, augment_cfg, substream(seed, "augment-view", i, v)),
            )
            for v in range(views)
        ])
    if path is not None:
        save_arrays(path, {"features": features}, {"kind": CACHE_KIND, "key": key, "split": split})
    return features


def build_feature_streams(
    handle: BackboneHandle,
    manifest: DatasetManifest,
    augment_cfg: AugmentConfig,
    cache_dir: Path | None = None,
    batch_size: int = 32,
    epoch_multiplicity: int = 4,
    seed: int = 0,
    loader=read_png,
) -> FeatureStreams:
    train_views = split_features(
        handle, manifest, "train", cache_dir, augment_cfg, epoch_multiplicity, seed, loader
    )
    return FeatureStreams(
        train_views=train_views,
        train_labels=manifest.labels("train"),
        val_features=split_features(handle, manifest, "val", cache_dir, loader=loader),
        val_labels=manifest.labels("val"),
        test_features=split_features(handle, manifest, "test", cache_dir, loader=loader),
        test_labels=manifest.labels("test"),
        batch_size=batch_size,
        epoch_multiplicity=epoch_multiplicity,
        seed=seed,
    )

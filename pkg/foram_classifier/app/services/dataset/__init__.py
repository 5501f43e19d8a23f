# Dataset handling: manifests, stratified splits, augmentation, batching, synthetic plates
from .augment import AugmentConfig, augment, augment_pixels
from .batching import FeatureStreams, batches, prefetch, steps_per_epoch
from .manifest import (
    SPLITS,
    DatasetManifest,
    SpecimenRecord,
    class_counts,
    ingest_directory,
    load_manifest,
    save_manifest,
    stratified_split,
)
from .synthetic import PlateSpec, generate_synthetic, write_benchmark

__all__ = [
    "SPLITS",
    "AugmentConfig",
    "DatasetManifest",
    "FeatureStreams",
    "PlateSpec",
    "SpecimenRecord",
    "augment",
    "augment_pixels",
    "batches",
    "class_counts",
    "generate_synthetic",
    "ingest_directory",
    "load_manifest",
    "prefetch",
    "save_manifest",
    "steps_per_epoch",
    "stratified_split",
    "write_benchmark",
]

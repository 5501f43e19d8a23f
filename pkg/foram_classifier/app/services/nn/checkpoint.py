from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import numpy as np

from ...core.errors import ModelLoadError
from ...core.utils import load_arrays, save_arrays
from .layers import ClassifierParams, DenseLayer

logger = logging.getLogger(__name__)

HEAD_KIND = "classifier_head"


def save_head(path: Path, params: ClassifierParams, **extra: Any) -> Path:
    """Write the head as float64 arrays plus dims, dropout rate, class names and seed."""
    meta = {
        "kind": HEAD_KIND,
        "dims": params.dims,
        "activations": [layer.activation for layer in params.layers],
        "dropout_rate": params.dropout_rate,
        "class_names": list(params.class_names),
        "seed": params.rng_seed,
        "flatten_order": "hwc",
        **extra,
    }
    arrays = {name: np.asarray(a, dtype=np.float64) for name, a in params.tensors().items()}
    path = save_arrays(path, arrays, meta)
    logger.info("Saved classifier head %s to %s", params.dims, path)
    return path


def load_head(path: Path) -> tuple[ClassifierParams, dict]:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != HEAD_KIND:
        raise ModelLoadError(f"{path} holds a {meta.get('kind')!r} checkpoint, not a classifier head")
    try:
        layers = [
            DenseLayer(arrays[f"dense{i}.weights"], arrays[f"dense{i}.bias"], act)
            for i, act in enumerate(meta["activations"])
        ]
        params = ClassifierParams(
            layers=layers,
            dropout_rate=float(meta["dropout_rate"]),
            rng_seed=int(meta["seed"]),
            class_names=list(meta["class_names"]),
        )
    except KeyError as exc:
        raise ModelLoadError(f"checkpoint {path} is missing {exc}") from exc
    if params.dims != list(meta["dims"]):
        raise ModelLoadError(f"checkpoint {path} dims {params.dims} disagree with metadata {meta['dims']}")
    return params, meta

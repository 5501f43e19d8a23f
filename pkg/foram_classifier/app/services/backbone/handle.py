from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from ...core.config import BackboneConfig
from ...core.errors import DimensionError, ModelLoadError, ParameterError
from ...core.utils import file_sha256, load_arrays, save_arrays
from ..imaging.detector import SpecimenImage
from .convnet import ConvBlock, SmallConvNet

logger = logging.getLogger(__name__)

BUILTIN = "builtin_small"
PRETRAINED = "pretrained_interchange"
INPUT_SHAPE = (224, 224, 3)
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
# images per extraction call
EXTRACT_BATCH = 16

Images = Union[np.ndarray, Sequence[SpecimenImage]]


@dataclass(frozen=True)
class BackboneHandle:
    """A loaded backbone plus the preprocessing its inputs need.

    ``digest`` identifies the weights (file hash) and keys the feature cache.
    """

    kind: str
    model: object
    digest: str
    trainable_blocks: frozenset[int] = field(default_factory=frozenset)
    source: str | None = None

    def __post_init__(self):
        if self.kind not in (BUILTIN, PRETRAINED):
            raise ParameterError(f"unknown backbone kind {self.kind!r}")
        if self.kind == PRETRAINED and self.trainable_blocks:
            raise ParameterError("the pretrained interchange backbone cannot have trainable blocks")

    @property
    def input_spec(self) -> tuple[int, int, int]:
        return INPUT_SHAPE

    @property
    def preprocessing(self) -> dict:
        if self.kind == PRETRAINED:
            return {"scale": 1 / 255, "mean": IMAGENET_MEAN.tolist(), "std": IMAGENET_STD.tolist()}
        return {"scale": 1 / 255, "mean": [0.0, 0.0, 0.0], "std": [1.0, 1.0, 1.0]}

    @property
    def feature_dim(self) -> int:
        if self.kind == PRETRAINED:
            return 7 * 7 * 512
        return self.model.feature_dim(INPUT_SHAPE[0])


def _pixels(images: Images) -> np.ndarray:
    if isinstance(images, np.ndarray):
        arr = images
    else:
        arr = np.stack([img.pixels if isinstance(img, SpecimenImage) else np.asarray(img) for img in images])
    if arr.ndim == 3:
        arr = arr[None]
    return arr


def preprocess(images: Images, kind: str = BUILTIN) -> np.ndarray:
    """Scale 8-bit specimens to [0, 1]; the pretrained kind is also mean/std normalized."""
    x = _pixels(images)
    if x.shape[1:] != INPUT_SHAPE:
        raise DimensionError(f"expected 224 x 224 x 3 specimens, got {x.shape[1:]}")
    x = x.astype(np.float64) / 255.0
    if kind == PRETRAINED:
        x = (x - IMAGENET_MEAN) / IMAGENET_STD
    return x


def extract_features(handle: BackboneHandle, images: Images, batch_size: int = EXTRACT_BATCH) -> np.ndarray:
    """Flattened (height, width, channel) feature vectors, one row per image."""
    pixels = _pixels(images)
    if not len(pixels):
        return np.zeros((0, handle.feature_dim))
    out = []
    for s in range(0, len(pixels), batch_size):
        x = preprocess(pixels[s:s + batch_size], handle.kind)
        if handle.kind == PRETRAINED:
            fmap = handle.model.run(x)
            out.append(fmap.reshape(len(fmap), -1).astype(np.float64))
        else:
            out.append(handle.model.forward(x))
    return np.concatenate(out)


# ---------- builtin checkpoints ----------

BACKBONE_KIND = "builtin_backbone"


def save_builtin(path: Path, net: SmallConvNet, **extra) -> Path:
    meta = {
        "kind": BACKBONE_KIND,
        "widths": list(net.widths),
        "in_channels": net.in_channels,
        "input_shape": list(INPUT_SHAPE),
        "flatten_order": "hwc",
        **extra,
    }
    path = save_arrays(path, net.tensors(), meta)
    logger.info("Saved builtin backbone to %s", path)
    return path


def load_builtin_net(path: Path) -> tuple[SmallConvNet, dict]:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != BACKBONE_KIND:
        raise ModelLoadError(f"{path} holds a {meta.get('kind')!r} checkpoint, not a builtin backbone")
    try:
        blocks = [
            ConvBlock(arrays[f"block{i}.weights"], arrays[f"block{i}.bias"])
            for i in range(1, len(meta["widths"]) + 1)
        ]
        net = SmallConvNet(blocks, int(meta["in_channels"]))
    except (KeyError, DimensionError) as exc:
        raise ModelLoadError(f"builtin backbone checkpoint {path} is malformed: {exc}") from exc
    return net, meta


def builtin_handle(net: SmallConvNet, digest: str, trainable_blocks=(), source: str | None = None) -> BackboneHandle:
    return BackboneHandle(BUILTIN, net, digest, frozenset(trainable_blocks), source)


def load_backbone(cfg: BackboneConfig, builtin_path: Path | None = None, trainable_blocks=()) -> BackboneHandle:
    """Open the backbone named by ``cfg``.

    The builtin kind reads its checkpoint from ``builtin_path``; the
    pretrained kind reads ``cfg.model_path``.
    """
    if cfg.kind == PRETRAINED:
        from .pretrained import InterchangeBackbone

        model = InterchangeBackbone(cfg.model_path, cfg.layout, cfg.threads)
        digest = file_sha256(cfg.model_path)
        return BackboneHandle(PRETRAINED, model, f"{PRETRAINED}:{cfg.layout}:{digest}", source=str(cfg.model_path))
    if builtin_path is None:
        raise ModelLoadError("no builtin backbone checkpoint path given")
    net, _ = load_builtin_net(builtin_path)
    return builtin_handle(net, f"{BUILTIN}:{file_sha256(builtin_path)}", trainable_blocks, str(builtin_path))

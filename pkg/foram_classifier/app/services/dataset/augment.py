"""Randomized specimen augmentation: flips, quarter turns and color jitter."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from skimage.color import hsv2rgb, rgb2hsv

from ...core.errors import DimensionError, ParameterError
from ..imaging.detector import SpecimenImage

FLIP_PROBABILITY = 0.5


@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = True
    rot90: bool = True
    brightness_delta: float = 0.10
    contrast_delta: float = 0.10
    saturation_delta: float = 0.10
    hue_delta: float = 0.05

    def __post_init__(self):
        for name in ("brightness_delta", "contrast_delta", "saturation_delta", "hue_delta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {value}")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(False, False, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_section(cls, section) -> "AugmentConfig":
        return cls(**section.model_dump())


@dataclass(frozen=True)
class AugmentDraw:
    flip: bool
    quarter_turns: int
    brightness: float
    contrast: float
    saturation: float
    hue: float


def sample_draw(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentDraw:
    """Draw one set of augmentation parameters.

    Six values are always consumed so streams stay aligned whichever
    transforms are enabled.
    """
    flip_u = rng.random()
    k = int(rng.integers(4))
    b, c, s = (rng.uniform(-1.0, 1.0) for _ in range(3))
    h = rng.uniform(-1.0, 1.0)
    return AugmentDraw(
        flip=cfg.hflip and flip_u < FLIP_PROBABILITY,
        quarter_turns=k if cfg.rot90 else 0,
        brightness=1.0 + b * cfg.brightness_delta,
        contrast=1.0 + c * cfg.contrast_delta,
        saturation=1.0 + s * cfg.saturation_delta,
        hue=h * cfg.hue_delta,
    )


def hflip(px: np.ndarray) -> np.ndarray:
    return px[:, ::-1]


def rot90(px: np.ndarray, k: int = 1) -> np.ndarray:
    return np.rot90(px, k, axes=(0, 1))


def adjust_brightness(px: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(np.asarray(px, dtype=np.float64) * factor, 0.0, 255.0)


def adjust_contrast(px: np.ndarray, factor: float) -> np.ndarray:
    """Scale each channel's deviation from its mean by ``factor``."""
    x = np.asarray(px, dtype=np.float64)
    mean = x.mean(axis=(0, 1), keepdims=True)
    return np.clip((x - mean) * factor + mean, 0.0, 255.0)


def adjust_saturation_hue(px: np.ndarray, saturation: float, hue: float) -> np.ndarray:
    """Scale HSV saturation and rotate hue on the [0, 1) circle."""
    hsv = rgb2hsv(np.clip(np.asarray(px, dtype=np.float64), 0.0, 255.0) / 255.0)
    hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * saturation, 0.0, 1.0)
    return hsv2rgb(hsv) * 255.0


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def apply_draw(px: np.ndarray, draw: AugmentDraw) -> np.ndarray:
    out = np.asarray(px)
    if draw.flip:
        out = hflip(out)
    if draw.quarter_turns:
        out = rot90(out, draw.quarter_turns)
    x = out.astype(np.float64)
    if draw.brightness != 1.0:
        x = adjust_brightness(x, draw.brightness)
    if draw.contrast != 1.0:
        x = adjust_contrast(x, draw.contrast)
    if draw.saturation != 1.0 or draw.hue != 0.0:
        x = adjust_saturation_hue(x, draw.saturation, draw.hue)
    return to_uint8(x)


def augment_pixels(px: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    px = np.asarray(px)
    if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] != px.shape[1]:
        raise DimensionError(f"expected a square H x W x 3 specimen, got {px.shape}")
    return apply_draw(px, sample_draw(cfg, rng))


def augment(img: SpecimenImage, cfg: AugmentConfig, rng: np.random.Generator) -> SpecimenImage:
    return replace(img, pixels=augment_pixels(img.pixels, cfg, rng))

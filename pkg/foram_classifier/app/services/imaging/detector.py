"""Specimen detection on microscope plates.

Two passes of blur, threshold and connected components: the first removes the
bright metallic border, the second finds specimen candidates. Candidates
below ``min_area`` pixels are discarded and a fixed-size crop of the original
color plate is taken at each survivor's binary centroid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ...core.config import DetectionConfig
from ...core.errors import DegenerateHistogramError, DimensionError
from ...core.utils import read_png, write_jsonl, write_png
from .components import Candidate, connected_components, measure_candidates
from .filters import class_mean_gap, gaussian_blur, threshold, to_grayscale

logger = logging.getLogger(__name__)

SPECIMEN_SIZE = 224


@dataclass
class Plate:
    pixels: np.ndarray
    id: str

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"plate {self.id}: expected H x W x 3 pixels, got {px.shape}")
        if px.dtype != np.uint8:
            raise DimensionError(f"plate {self.id}: expected 8-bit channels, got {px.dtype}")
        self.pixels = px

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


@dataclass
class SpecimenImage:
    pixels: np.ndarray
    source_plate: str
    centroid: tuple[float, float]
    area: int = 0
    bbox: tuple[int, int, int, int] = (0, 0, 0, 0)
    # (top, left) of the crop window inside the plate
    origin: tuple[int, int] = field(default=(0, 0))

    def record(self, index: int) -> dict:
        return {
            "plate_id": self.source_plate,
            "index": index,
            "centroid": [self.centroid[0], self.centroid[1]],
            "area": self.area,
            "bbox": list(self.bbox),
            "origin": list(self.origin),
        }


def load_plate(path: Path) -> Plate:
    path = Path(path)
    return Plate(pixels=read_png(path), id=path.stem)


def foreground(blurred: np.ndarray, cfg: DetectionConfig) -> np.ndarray | None:
    """Thresholded mask, or None when the image holds no contrasting foreground.

    Otsu splits any histogram, including a lone band of sensor noise; such a
    split percolates into one plate-sized component, so Otsu masks whose class
    means differ by less than ``min_contrast`` count as empty.
    """
    try:
        mask = threshold(blurred, cfg.threshold)
    except DegenerateHistogramError:
        return None
    if cfg.threshold == "otsu" and class_mean_gap(blurred, mask) < cfg.min_contrast:
        return None
    return mask


def remove_border(plate: Plate, cfg: DetectionConfig) -> np.ndarray:
    """Grayscale plate with the detected metallic border painted out.

    The border is the largest thresholded component touching at least two
    image edges; its pixels (dilated by ``ceil(border_sigma)``) take the median
    intensity of the remaining pixels. Without a border, or without any
    contrasting interior, the grayscale plate is returned unchanged.
    """
    gray = to_grayscale(plate.pixels)
    mask = foreground(gaussian_blur(gray, cfg.border_sigma), cfg)
    if mask is None:
        logger.debug("plate %s: no contrasting foreground, no border pass", plate.id)
        return gray

    cmap = connected_components(mask, cfg.connectivity)
    framing = [c for c in measure_candidates(cmap) if c.touched_edges(gray.shape) >= 2]
    if not framing:
        return gray
    border = max(framing, key=lambda c: (c.area, -c.label))

    region = ndimage.binary_dilation(
        cmap.labels == border.label, iterations=math.ceil(cfg.border_sigma)
    )
    if region.all():
        return gray
    out = gray.copy()
    out[region] = np.median(gray[~region])
    logger.debug("plate %s: removed border of %d px", plate.id, int(region.sum()))
    return out


def crop_window(centroid: tuple[float, float], shape: tuple[int, int], size: int) -> tuple[int, int]:
    """Top-left corner of a ``size`` window centred on ``centroid``, clamped inside ``shape``."""
    top = int(math.floor(centroid[0] + 0.5)) - size // 2
    left = int(math.floor(centroid[1] + 0.5)) - size // 2
    top = min(max(top, 0), shape[0] - size)
    left = min(max(left, 0), shape[1] - size)
    return top, left


def find_candidates(plate: Plate, cfg: DetectionConfig) -> list[Candidate]:
    """Candidates from the specimen pass, before the area filter."""
    gray = remove_border(plate, cfg)
    mask = foreground(gaussian_blur(gray, cfg.sigma), cfg)
    if mask is None:
        return []
    return measure_candidates(connected_components(mask, cfg.connectivity))


def detect_specimens(plate: Plate, cfg: DetectionConfig | None = None) -> list[SpecimenImage]:
    cfg = cfg or DetectionConfig()
    size = cfg.crop_size
    h, w = plate.shape
    if h < size or w < size:
        raise DimensionError(f"plate {plate.id} is {h}x{w}, smaller than the {size}x{size} crop")

    candidates = find_candidates(plate, cfg)
    kept = [c for c in candidates if c.area >= cfg.min_area]
    logger.info(
        "plate %s: %d candidates, %d kept (min_area=%d)",
        plate.id, len(candidates), len(kept), cfg.min_area,
    )

    specimens = []
    for cand in kept:
        top, left = crop_window(cand.centroid, (h, w), size)
        specimens.append(
            SpecimenImage(
                pixels=plate.pixels[top:top + size, left:left + size].copy(),
                source_plate=plate.id,
                centroid=cand.centroid,
                area=cand.area,
                bbox=cand.bbox,
                origin=(top, left),
            )
        )
    return specimens


def save_specimens(specimens: list[SpecimenImage], out_dir: Path) -> list[dict]:
    """Write ``<plate_id>_<index>.png`` crops and return their detection records."""
    out_dir = Path(out_dir)
    records = []
    for i, spec in enumerate(specimens):
        name = f"{spec.source_plate}_{i}.png"
        write_png(out_dir / name, spec.pixels)
        rec = spec.record(i)
        rec["file"] = name
        records.append(rec)
    return records


def write_detection_records(path: Path, records: list[dict]) -> Path:
    return write_jsonl(path, records)

"""Procedural microscope plates for desk-scale experiments.

Each of the four classes has its own shape and texture:

* planktic              ringed disks
* calcareous_benthic    speckled ellipses
* agglutinated_benthic  lobed chambers along a spiral
* sediment              clusters of angular grains

Blobs are bright on a dark, slightly noisy field inside an optional metallic
frame, mirroring real plates closely enough for the detection pipeline.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage.draw import polygon as draw_polygon

from ...core.config import CLASS_NAMES
from ...core.errors import ParameterError, PlacementError
from ...core.utils import substream, write_jsonl, write_png
from ..imaging.detector import Plate

logger = logging.getLogger(__name__)

BACKGROUND = np.array([34.0, 32.0, 36.0])
FRAME = np.array([205.0, 205.0, 212.0])
# keep planted blobs this far apart so blurred masks never merge
GAP = 6


@dataclass
class PlateSpec:
    plate_id: str = "plate"
    height: int = 1400
    width: int = 1800
    blob_count: int = 60
    # None draws a class per blob
    class_name: str | None = None
    # explicit per-blob areas; overrides blob_count and the area range
    areas: Sequence[int] | None = None
    min_area: int = 1500
    max_area: int = 4000
    border_width: int = 12
    noise: float = 4.0
    max_retries: int = 500
    class_names: Sequence[str] = field(default_factory=lambda: list(CLASS_NAMES))


@dataclass(frozen=True)
class BlobTruth:
    class_name: str
    centroid: tuple[float, float]
    area: int
    bbox: tuple[int, int, int, int]

    def to_dict(self) -> dict:
        return {
            "class": self.class_name,
            "centroid": [self.centroid[0], self.centroid[1]],
            "area": self.area,
            "bbox": list(self.bbox),
        }


def _grid(radius: int) -> tuple[np.ndarray, np.ndarray]:
    return np.mgrid[-radius:radius + 1, -radius:radius + 1].astype(np.float64)


def _ringed_disk(scale, params, yy, xx):
    return yy * yy + xx * xx <= scale * scale


def _speckled_ellipse(scale, params, yy, xx):
    aspect, theta = params["aspect"], params["theta"]
    a, b = scale * aspect, scale / aspect
    u = xx * math.cos(theta) + yy * math.sin(theta)
    v = -xx * math.sin(theta) + yy * math.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _lobed_chambers(scale, params, yy, xx):
    mask = np.zeros(yy.shape, dtype=bool)
    for cy, cx, r in params["lobes"]:
        mask |= (yy - scale * cy) ** 2 + (xx - scale * cx) ** 2 <= (scale * r) ** 2
    return mask


def _angular_grains(scale, params, yy, xx):
    radius = (yy.shape[0] - 1) // 2
    mask = np.zeros(yy.shape, dtype=bool)
    for cy, cx, verts in params["grains"]:
        rows = radius + scale * (cy + verts[:, 0])
        cols = radius + scale * (cx + verts[:, 1])
        rr, cc = draw_polygon(rows, cols, shape=mask.shape)
        mask[rr, cc] = True
    return mask


_SHAPES = {
    "planktic": _ringed_disk,
    "calcareous_benthic": _speckled_ellipse,
    "agglutinated_benthic": _lobed_chambers,
    "sediment": _angular_grains,
}
SHAPE_KINDS = list(_SHAPES)


def shape_kind(class_name: str, class_names: Sequence[str]) -> str:
    """Shape family drawn for ``class_name``, chosen by its position in ``class_names``."""
    try:
        index = list(class_names).index(class_name)
    except ValueError:
        raise ParameterError(f"unknown specimen class {class_name!r}") from None
    return SHAPE_KINDS[index % len(SHAPE_KINDS)]


def _shape_params(kind: str, rng: np.random.Generator) -> dict:
    if kind == "calcareous_benthic":
        aspect = rng.uniform(1.25, 1.6)
        return {"aspect": aspect, "theta": rng.uniform(0, math.pi), "extent": aspect}
    if kind == "agglutinated_benthic":
        # chambers grow along a spiral; consecutive chambers overlap so the shell stays connected
        n = int(rng.integers(3, 6))
        angle = rng.uniform(0, 2 * math.pi)
        cy = cx = 0.0
        r_prev = 0.35
        lobes = [(cy, cx, r_prev)]
        for i in range(1, n):
            r = 0.35 + 0.12 * i
            step = 0.7 * (r_prev + r)
            cy, cx = cy + step * math.sin(angle), cx + step * math.cos(angle)
            lobes.append((cy, cx, r))
            angle += rng.uniform(0.9, 1.3)
            r_prev = r
        my = sum(l[0] for l in lobes) / n
        mx = sum(l[1] for l in lobes) / n
        lobes = [(y - my, x - mx, r) for y, x, r in lobes]
        extent = max(math.hypot(y, x) + r for y, x, r in lobes)
        return {"lobes": lobes, "extent": extent}
    if kind == "sediment":
        # a chain of convex-ish polygons, each overlapping the previous one
        grains = []
        cy = cx = 0.0
        heading = rng.uniform(0, 2 * math.pi)
        for _ in range(int(rng.integers(2, 4))):
            k = int(rng.integers(4, 7))
            base = np.arange(k) * 2 * math.pi / k
            angles = base + rng.uniform(-0.3, 0.3, size=k) * math.pi / k
            radii = rng.uniform(0.5, 0.9, size=k)
            verts = np.column_stack([radii * np.sin(angles), radii * np.cos(angles)])
            grains.append((cy, cx, verts))
            heading += rng.uniform(-1.0, 1.0)
            cy, cx = cy + 0.35 * math.sin(heading), cx + 0.35 * math.cos(heading)
        my = sum(g[0] for g in grains) / len(grains)
        mx = sum(g[1] for g in grains) / len(grains)
        grains = [(y - my, x - mx, v) for y, x, v in grains]
        extent = max(math.hypot(y, x) for y, x, _ in grains) + 0.9
        return {"grains": grains, "extent": extent}
    return {"extent": 1.0}


def render_mask(kind: str, area: int, params: dict) -> np.ndarray:
    """Boolean mask of a ``kind`` blob whose pixel count is close to ``area``.

    The linear scale is refined a few times against the rasterized count.
    """
    fn = _SHAPES[kind]
    scale = math.sqrt(area / math.pi)
    mask = None
    for _ in range(6):
        radius = int(math.ceil(params["extent"] * scale)) + 2
        yy, xx = _grid(radius)
        mask = fn(scale, params, yy, xx)
        count = int(mask.sum())
        if count == 0:
            scale *= 1.5
            continue
        if abs(count - area) <= 0.01 * area:
            break
        scale *= math.sqrt(area / count)
    rows, cols = np.nonzero(mask)
    return mask[rows.min():rows.max() + 1, cols.min():cols.max() + 1]


def _texture(kind: str, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """RGB float values for every pixel of the blob's bounding box."""
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r = np.hypot(yy - cy, xx - cx)
    if kind == "planktic":
        period = rng.uniform(5.0, 8.0)
        shade = 208.0 + 28.0 * np.cos(2 * math.pi * r / period)
        rgb = np.stack([shade, shade * 0.97, shade * 0.90], axis=-1)
    elif kind == "calcareous_benthic":
        speckle = rng.random((h, w)) < 0.12
        shade = np.where(speckle, 160.0, 222.0) + rng.normal(0, 6.0, (h, w))
        rgb = np.stack([shade, shade, shade * 0.98], axis=-1)
    elif kind == "agglutinated_benthic":
        mottle = ndimage.gaussian_filter(rng.normal(0, 1, (h, w)), 2.0)
        mottle /= max(np.abs(mottle).max(), 1e-9)
        shade = 1.0 + 0.12 * mottle
        rgb = np.stack([200.0 * shade, 160.0 * shade, 118.0 * shade], axis=-1)
    else:
        # flat facets in angular sectors around the cluster centre
        sectors = 5
        facet = (np.floor((np.arctan2(yy - cy, xx - cx) + math.pi) / (2 * math.pi) * sectors)).astype(int)
        tones = rng.uniform(178.0, 235.0, size=sectors + 1)
        shade = tones[np.clip(facet, 0, sectors)]
        rgb = np.stack([shade, shade * 0.95, shade * 0.80], axis=-1)
    return np.clip(rgb, 0.0, 255.0)


def _background(spec: PlateSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    canvas = np.broadcast_to(BACKGROUND, (h, w, 3)).copy()
    if spec.noise > 0:
        canvas += rng.normal(0.0, spec.noise, (h, w, 1))
    b = spec.border_width
    if b > 0:
        frame = np.zeros((h, w), dtype=bool)
        frame[:b, :] = frame[-b:, :] = True
        frame[:, :b] = frame[:, -b:] = True
        canvas[frame] = FRAME
    return canvas


def generate_synthetic(spec: PlateSpec, seed: int) -> tuple[Plate, list[BlobTruth]]:
    """Render a plate and return it with exact per-blob ground truth."""
    if spec.height < 224 or spec.width < 224:
        raise ParameterError(f"plate must be at least 224x224, got {spec.height}x{spec.width}")
    if spec.class_name is not None:
        shape_kind(spec.class_name, spec.class_names)
    rng = substream(seed, "synth")
    canvas = _background(spec, rng)

    if spec.areas is not None:
        areas = [int(a) for a in spec.areas]
    else:
        areas = [int(a) for a in rng.integers(spec.min_area, spec.max_area + 1, size=spec.blob_count)]

    margin = spec.border_width + GAP + 2
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    truth: list[BlobTruth] = []
    for area in areas:
        name = spec.class_name or str(rng.choice(list(spec.class_names)))
        kind = shape_kind(name, spec.class_names)
        mask = render_mask(kind, area, _shape_params(kind, rng))
        mh, mw = mask.shape
        hi_r, hi_c = spec.height - margin - mh, spec.width - margin - mw
        if hi_r < margin or hi_c < margin:
            raise PlacementError(f"blob of area {area} does not fit on a {spec.height}x{spec.width} plate")
        grown = ndimage.binary_dilation(np.pad(mask, GAP), iterations=GAP)
        for _ in range(spec.max_retries):
            top = int(rng.integers(margin, hi_r + 1))
            left = int(rng.integers(margin, hi_c + 1))
            window = occupied[top - GAP:top + mh + GAP, left - GAP:left + mw + GAP]
            if not (window & grown).any():
                break
        else:
            raise PlacementError(
                f"could not place blob {len(truth) + 1} of {len(areas)} without overlap "
                f"after {spec.max_retries} attempts"
            )
        occupied[top:top + mh, left:left + mw] |= mask
        patch = canvas[top:top + mh, left:left + mw]
        patch[mask] = _texture(kind, mask, rng)[mask]

        rows, cols = np.nonzero(mask)
        truth.append(
            BlobTruth(
                class_name=name,
                centroid=(float(rows.mean() + top), float(cols.mean() + left)),
                area=int(mask.sum()),
                bbox=(top + int(rows.min()), left + int(cols.min()),
                      int(rows.max() - rows.min() + 1), int(cols.max() - cols.min() + 1)),
            )
        )

    pixels = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    return Plate(pixels=pixels, id=spec.plate_id), truth


def write_benchmark(
    out_dir: Path,
    seed: int,
    plates_per_class: int = 10,
    blobs_per_plate: int = 60,
    height: int = 1400,
    width: int = 1800,
    min_area: int = 1500,
    max_area: int = 4000,
    border_width: int = 12,
    class_names: Sequence[str] = CLASS_NAMES,
) -> list[dict]:
    """Write single-class plates to ``out_dir/<class>/<plate_id>.png`` plus ``truth.jsonl``."""
    out_dir = Path(out_dir)
    rows = []
    for class_id, cls in enumerate(class_names):
        for i in range(plates_per_class):
            plate_id = f"{cls}_{i:03d}"
            spec = PlateSpec(
                plate_id=plate_id, height=height, width=width, blob_count=blobs_per_plate,
                class_name=cls, min_area=min_area, max_area=max_area,
                border_width=border_width, class_names=class_names,
            )
            plate_seed = int(substream(seed, "plate", class_id, i).integers(0, 2**31 - 1))
            plate, truth = generate_synthetic(spec, plate_seed)
            write_png(out_dir / cls / f"{plate_id}.png", plate.pixels)
            for t in truth:
                row = t.to_dict()
                row["plate_id"] = plate_id
                rows.append(row)
            logger.info("Rendered plate %s with %d blobs", plate_id, len(truth))
    write_jsonl(out_dir / "truth.jsonl", rows)
    return rows

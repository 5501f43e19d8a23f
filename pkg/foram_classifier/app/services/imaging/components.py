from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.measure import regionprops

from ...core.errors import ParameterError


@dataclass(frozen=True)
class ComponentMap:
    labels: np.ndarray
    count: int


@dataclass(frozen=True)
class Candidate:
    label: int
    area: int
    centroid: tuple[float, float]
    # (top, left, height, width)
    bbox: tuple[int, int, int, int]

    def touched_edges(self, shape: tuple[int, int]) -> int:
        top, left, h, w = self.bbox
        return sum((top == 0, left == 0, top + h == shape[0], left + w == shape[1]))


def connected_components(mask: np.ndarray, connectivity: int = 8) -> ComponentMap:
    """Label maximal connected foreground regions.

    Labels run from 1 in raster-scan order of each component's first pixel.
    """
    if connectivity not in (4, 8):
        raise ParameterError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=structure)
    if count:
        ids, first = np.unique(labels.ravel(), return_index=True)
        fg = ids != 0
        order = np.argsort(first[fg], kind="stable")
        remap = np.zeros(count + 1, dtype=labels.dtype)
        remap[ids[fg][order]] = np.arange(1, count + 1, dtype=labels.dtype)
        labels = remap[labels]
    return ComponentMap(labels=labels, count=int(count))


def measure_candidates(cmap: ComponentMap) -> list[Candidate]:
    """One candidate per label with exact area, binary centroid and tight bbox."""
    out = []
    for prop in regionprops(cmap.labels):
        min_r, min_c, max_r, max_c = prop.bbox
        r, c = prop.centroid
        out.append(
            Candidate(
                label=int(prop.label),
                area=int(prop.area),
                centroid=(float(r), float(c)),
                bbox=(int(min_r), int(min_c), int(max_r - min_r), int(max_c - min_c)),
            )
        )
    return out

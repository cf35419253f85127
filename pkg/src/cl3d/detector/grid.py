"""BEV grid geometry and Gaussian center heatmaps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..scene_sim.types import ObjectLabel


@dataclass(frozen=True)
class BevGrid:
    """Square grid over ``[-extent, extent]^2``. Maps are indexed ``[ix, iy, channel]``."""

    extent: float = 50.0
    resolution: int = 128

    def __post_init__(self):
        if self.resolution <= 0 or self.extent <= 0:
            raise ValueError("grid resolution and extent must be positive")

    @property
    def cell_size(self) -> float:
        return 2.0 * self.extent / self.resolution

    def cell_of(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer cell indices and an in-extent mask for world xy points."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        ij = np.floor((xy + self.extent) / self.cell_size).astype(np.int64)
        inside = np.all((ij >= 0) & (ij < self.resolution), axis=1)
        return ij, inside

    def cell_center(self, i, j) -> tuple[np.ndarray, np.ndarray]:
        return (-self.extent + (np.asarray(i) + 0.5) * self.cell_size,
                -self.extent + (np.asarray(j) + 0.5) * self.cell_size)

    def to_continuous(self, xy: np.ndarray) -> np.ndarray:
        """World xy to continuous cell coordinates where cell ``i`` is centered at ``i``."""
        return (np.asarray(xy, dtype=np.float64) + self.extent) / self.cell_size - 0.5

    def contains(self, xy) -> bool:
        x, y = xy
        return -self.extent <= x < self.extent and -self.extent <= y < self.extent


def gaussian_radius(length: float, width: float, min_overlap: float = 0.7) -> float:
    """Radius (same units as the inputs) keeping IoU >= ``min_overlap`` under corner jitter.

    This is the usual three-case bound used by center-heatmap detectors.
    """
    a1, b1 = 1.0, length + width
    c1 = width * length * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2
    a2, b2 = 4.0, 2 * (length + width)
    c2 = (1 - min_overlap) * width * length
    r2 = (b2 + math.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2
    a3, b3 = 4 * min_overlap, -2 * min_overlap * (length + width)
    c3 = (min_overlap - 1) * width * length
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def kernel_sigma(label: ObjectLabel, grid: BevGrid) -> float:
    """Size-adaptive standard deviation in cells, floored at half a cell."""
    l, w = label.box.size[0] / grid.cell_size, label.box.size[1] / grid.cell_size
    return max(gaussian_radius(l, w) / 3.0, 0.5)


def gaussian_value(x, y, px, py, sigma):
    return np.exp(-((np.asarray(x) - px) ** 2 + (np.asarray(y) - py) ** 2) / (2.0 * sigma ** 2))


def label_cell(label: ObjectLabel, grid: BevGrid) -> tuple[int, int] | None:
    ij, inside = grid.cell_of(np.array(label.box.center[:2]))
    return (int(ij[0, 0]), int(ij[0, 1])) if inside[0] else None


def splat_gaussian(channel: np.ndarray, center: tuple[int, int], sigma: float, peak: float = 1.0) -> None:
    """Max-splat ``peak * gaussian`` centered on an integer cell; support radius ``ceil(3 sigma)``."""
    res_x, res_y = channel.shape
    r = int(math.ceil(3 * sigma))
    ci, cj = center
    i0, i1 = max(ci - r, 0), min(ci + r + 1, res_x)
    j0, j1 = max(cj - r, 0), min(cj + r + 1, res_y)
    ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    g = peak * gaussian_value(ii, jj, ci, cj, sigma)
    np.maximum(channel[i0:i1, j0:j1], g, out=channel[i0:i1, j0:j1])


def render_target_heatmap(labels: list[ObjectLabel], grid: BevGrid, classes: tuple[int, ...],
                          peaks: list[float] | None = None) -> np.ndarray:
    """Heatmap ``Y`` of shape (res, res, len(classes)); overlapping kernels combine by max.

    ``peaks`` optionally scales each label's kernel (used for reweight maps).
    Labels outside the grid or of undetected classes are skipped.
    """
    heat = np.zeros((grid.resolution, grid.resolution, len(classes)))
    for n, lab in enumerate(labels):
        if lab.class_id not in classes:
            continue
        cell = label_cell(lab, grid)
        if cell is None:
            continue
        peak = 1.0 if peaks is None else float(peaks[n])
        splat_gaussian(heat[:, :, classes.index(lab.class_id)], cell, kernel_sigma(lab, grid), peak)
    return heat

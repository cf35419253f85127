from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from ..scene_sim.types import Box3D, ObjectLabel
from ..scene_sim.world import CLASS_GEOMETRY
from .grid import BevGrid
from .model import FeatureMaps

_MAX_LOG_SIZE = 3.0  # exp(3) ~ 20 m, keeps garbage regressions finite


@dataclass(frozen=True)
class Detection:
    center: tuple[float, float]
    size: tuple[float, float]  # (width, length)
    yaw: float
    velocity: tuple[float, float]
    class_id: int
    score: float

    def to_label(self, ground_z: float = -1.7) -> ObjectLabel:
        """Lift the BEV detection to a 3D pseudo-label resting on the ground with the class height."""
        (_, _, h), clearance = CLASS_GEOMETRY.get(self.class_id, ((0, 0, 1.5), 0.0))
        w, l = self.size
        box = Box3D((self.center[0], self.center[1], ground_z + clearance + h / 2), (l, w, h), self.yaw)
        return ObjectLabel(box, self.class_id, self.velocity, float(min(max(self.score, 0.0), 1.0)))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def decode(maps: FeatureMaps, grid: BevGrid, classes: tuple[int, ...], score_floor: float = 0.2,
           max_detections: int = 100) -> list[Detection]:
    """Peaks of the sigmoid heatmap (3x3 local maxima above ``score_floor``) turned into boxes."""
    if not 0.0 < score_floor <= 1.0:
        raise ValueError("score_floor must lie in (0, 1]")
    scores = sigmoid(maps.heat)
    peaks = (scores == maximum_filter(scores, size=(3, 3, 1), mode="constant", cval=0.0)) & (scores >= score_floor)
    ii, jj, cc = np.nonzero(peaks)
    s = scores[ii, jj, cc]
    keep = np.argsort(-s, kind="stable")[:max_detections]
    out = []
    for n in keep:
        i, j, c = ii[n], jj[n], cc[n]
        dx, dy, lw, ll, sn, cs = (float(v) for v in maps.box[i, j])
        cx, cy = grid.cell_center(i, j)
        vx, vy = (float(v) for v in maps.vel[i, j])
        out.append(Detection(
            center=(float(cx) + dx, float(cy) + dy),
            size=(math.exp(min(lw, _MAX_LOG_SIZE)), math.exp(min(ll, _MAX_LOG_SIZE))),
            yaw=math.atan2(sn, cs),
            velocity=(vx, vy),
            class_id=classes[c],
            score=float(s[n]),
        ))
    return out

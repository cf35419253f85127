"""Per-class EMA prototypes and the similarity reweight map."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .alignment import FusionFeature
from .detector.grid import BevGrid, render_target_heatmap
from .errors import CL3DError
from .scene_sim.types import ObjectLabel

log = logging.getLogger(__name__)

EMA_ALPHA = 0.99


@dataclass
class Prototype:
    vector: np.ndarray
    initialized: bool = False
    count: int = 0


@dataclass
class PrototypeStore:
    dim: int
    alpha: float = EMA_ALPHA
    protos: dict[int, Prototype] = field(default_factory=dict)

    def get(self, class_id: int) -> Prototype:
        if class_id not in self.protos:
            self.protos[class_id] = Prototype(np.zeros(self.dim))
        return self.protos[class_id]

    def update(self, features: list[FusionFeature]) -> None:
        """One EMA step per class present in ``features``; classes never mix."""
        for c in sorted({f.class_id for f in features}):
            f_fusion = aggregate_batch(features, c)
            if f_fusion is not None:
                self.protos[c] = ema_update(self.get(c), f_fusion, self.alpha)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for c, p in sorted(self.protos.items()):
            out[f"proto.{c}.vector"] = p.vector.astype(np.float32)
            out[f"proto.{c}.state"] = np.array([float(p.initialized), float(p.count)], dtype=np.float32)
        return out


def aggregate_batch(features: list[FusionFeature], class_id: int) -> np.ndarray | None:
    """Confidence-weighted mean ``(1/N) sum d_i v_i`` over features of one class (not renormalized)."""
    sel = [f for f in features if f.class_id == class_id]
    if not sel:
        return None
    return sum(f.confidence * f.vector for f in sel) / len(sel)


def ema_update(proto: Prototype, f_fusion: np.ndarray, alpha: float = EMA_ALPHA) -> Prototype:
    f_fusion = np.asarray(f_fusion, dtype=np.float64)
    if not np.all(np.isfinite(f_fusion)):
        log.warning("rejected non-finite prototype update")
        return proto
    if not proto.initialized:
        return Prototype(f_fusion.copy(), True, proto.count + 1)
    return Prototype(alpha * proto.vector + (1 - alpha) * f_fusion, True, proto.count + 1)


def similarity(feature: FusionFeature, proto: Prototype) -> float:
    """Cosine similarity clamped to [0, 1]."""
    if not proto.initialized:
        raise CL3DError("cold-prototype", "prototype has not been initialized")
    denom = np.linalg.norm(feature.vector) * np.linalg.norm(proto.vector)
    if denom == 0:
        return 0.0
    return float(min(1.0, max(0.0, feature.vector @ proto.vector / denom)))


def build_reweight_map(labels: list[ObjectLabel], similarities: list[float], grid: BevGrid,
                       classes: tuple[int, ...]) -> np.ndarray:
    """W: each label's Gaussian kernel scaled by its similarity, max-combined, zero elsewhere."""
    if len(labels) != len(similarities):
        raise ValueError("need exactly one similarity per pseudo-label")
    outside = sum(not grid.contains(lab.box.center[:2]) for lab in labels)
    if outside:
        log.warning("%d pseudo-label(s) outside the grid skipped", outside)
    return render_target_heatmap(labels, grid, classes, peaks=similarities)


def effective_weight(w: np.ndarray, background: float) -> np.ndarray:
    """Loss weight actually applied: W with a floor of ``background`` everywhere."""
    return np.maximum(w, background)

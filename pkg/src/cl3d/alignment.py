"""Per-object geometry and motion features and their fusion vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector.grid import BevGrid
from .detector.model import DetectorState, FeatureMaps
from .errors import CL3DError
from .pointops import DEFAULT_CROP_MARGIN, DEFAULT_MIN_POINTS, DEFAULT_SHAPE_POINTS, sample_shape
from .scene_sim.types import Box3D, ObjectLabel


@dataclass
class AlignmentConfig:
    use_sga: bool = True
    use_tma: bool = True
    shape_points: int = DEFAULT_SHAPE_POINTS
    min_points: int = DEFAULT_MIN_POINTS
    crop_margin: float = DEFAULT_CROP_MARGIN
    aux_weight: float = 0.5


@dataclass
class GeoFeature:
    f_local: np.ndarray
    f_global: np.ndarray

    @property
    def f_geo(self) -> np.ndarray:
        return np.concatenate([self.f_local, self.f_global])


@dataclass
class MotionFeature:
    f_mo: np.ndarray


@dataclass
class FusionFeature:
    vector: np.ndarray
    confidence: float
    class_id: int


# -- shape perceptron -----------------------------------------------------------------------------


def shape_forward(params: dict, shapes: np.ndarray):
    """Point-wise 3 -> h -> h perceptron (ReLU hidden, linear output), max-pooled over points.

    ``shapes`` is (B, K, 3); returns ``(f_local (B, h), cache)``.
    """
    x = np.asarray(shapes, dtype=params["shape.w1"].dtype)
    z1 = x @ params["shape.w1"] + params["shape.b1"]
    h1 = np.maximum(z1, 0)
    z2 = h1 @ params["shape.w2"] + params["shape.b2"]
    arg = np.argmax(z2, axis=1)  # (B, h): which point wins each channel
    f_local = np.take_along_axis(z2, arg[:, None, :], axis=1)[:, 0]
    return f_local, (x, z1, h1, arg)


def shape_backward(params: dict, cache, d_local: np.ndarray) -> dict[str, np.ndarray]:
    x, z1, h1, arg = cache
    b, k, _ = x.shape
    dz2 = np.zeros((b, k, d_local.shape[1]), dtype=np.float64)
    np.put_along_axis(dz2, arg[:, None, :], d_local[:, None, :], axis=1)
    g = {
        "shape.w2": np.einsum("bki,bkj->ij", h1, dz2),
        "shape.b2": dz2.sum((0, 1)),
    }
    dz1 = (dz2 @ params["shape.w2"].T) * (z1 > 0)
    g["shape.w1"] = np.einsum("bki,bkj->ij", x, dz1)
    g["shape.b1"] = dz1.sum((0, 1))
    return g


def shape_aux_loss(state: DetectorState, shapes: np.ndarray, class_ids: np.ndarray, weight: float = 1.0):
    """Cross-entropy of a linear classifier on f_local; returns (loss, grads on shape.* params)."""
    p = state.params
    if len(shapes) == 0:
        return 0.0, {}
    f_local, cache = shape_forward(p, shapes)
    logits = (f_local @ p["shape.cls.w"] + p["shape.cls.b"]).astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = len(shapes)
    loss = -logp[np.arange(n), class_ids].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), class_ids] -= 1.0
    dlogits *= weight / n
    grads = shape_backward(p, cache, dlogits @ p["shape.cls.w"].T)
    grads["shape.cls.w"] = f_local.T @ dlogits
    grads["shape.cls.b"] = dlogits.sum(0)
    return weight * float(loss), grads


def make_shape_aux(cfg: AlignmentConfig, n_classes: int):
    """Auxiliary-loss callback for the training loop: classify every labeled object's FPS shape."""

    def aux(state: DetectorState, batch) -> tuple[float, dict]:
        shapes, ids = [], []
        for s in batch:
            for lab in s.labels:
                if lab.class_id >= n_classes:
                    continue
                sample = sample_shape(s.cur, lab.box, cfg.shape_points, cfg.min_points, cfg.crop_margin)
                if sample is not None:
                    shapes.append(sample.points)
                    ids.append(lab.class_id)
        if not shapes:
            return 0.0, {}
        return shape_aux_loss(state, np.stack(shapes), np.array(ids), cfg.aux_weight)

    return aux


# -- sampling from BEV maps -----------------------------------------------------------------------


def bilinear_sample(feature_map: np.ndarray, xy, grid: BevGrid) -> np.ndarray:
    """Bilinear interpolation of a (res, res, C) map at world ``xy``; cell centers are the nodes."""
    if not grid.contains(xy):
        raise CL3DError("out-of-extent", f"point {tuple(xy)} lies outside the grid")
    res = grid.resolution
    u = np.clip(grid.to_continuous(np.asarray(xy, dtype=np.float64)), 0.0, res - 1.0)
    i0 = np.minimum(np.floor(u).astype(int), res - 2)
    fu, fv = u[0] - i0[0], u[1] - i0[1]
    i, j = i0
    f = feature_map.astype(np.float64)
    return ((1 - fu) * (1 - fv) * f[i, j] + fu * (1 - fv) * f[i + 1, j]
            + (1 - fu) * fv * f[i, j + 1] + fu * fv * f[i + 1, j + 1])


def extract_geo(points: np.ndarray, box: Box3D, maps: FeatureMaps, state: DetectorState,
                cfg: AlignmentConfig | None = None) -> GeoFeature:
    """f_local from the FPS-sampled self-coordinate shape; f_global from the backbone map at the box center."""
    cfg = cfg or AlignmentConfig()
    sample = sample_shape(points, box, cfg.shape_points, cfg.min_points, cfg.crop_margin)
    if sample is None:
        raise CL3DError("degenerate-shape", f"fewer than {cfg.min_points} points inside the box")
    f_local, _ = shape_forward(state.params, sample.points[None])
    f_global = bilinear_sample(maps.F, box.center[:2], state.cfg.grid)
    return GeoFeature(f_local[0].astype(np.float64), f_global)


def extract_motion(box: Box3D, maps: FeatureMaps, grid: BevGrid) -> MotionFeature:
    return MotionFeature(bilinear_sample(maps.M, box.center[:2], grid))


def fuse(geo: GeoFeature | None, mo: MotionFeature | None, d: float, class_id: int = 0,
         dims: tuple[int, int, int] | None = None) -> FusionFeature:
    """L2-normalized ``f_local + f_global + f_mo`` concatenation; a missing branch is zero-filled."""
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"confidence {d} outside [0, 1]")
    if dims is None:
        dims = (len(geo.f_local) if geo else len(mo.f_mo), len(geo.f_global) if geo else len(mo.f_mo),
                len(mo.f_mo) if mo else len(geo.f_local))
    parts = [geo.f_local if geo else np.zeros(dims[0]), geo.f_global if geo else np.zeros(dims[1]),
             mo.f_mo if mo else np.zeros(dims[2])]
    vec = np.concatenate(parts).astype(np.float64)
    norm = np.linalg.norm(vec)
    if not np.isfinite(norm) or norm == 0.0:
        raise CL3DError("null-feature", "fusion vector has zero norm")
    return FusionFeature(vec / norm, float(d), class_id)


def label_features(points: np.ndarray, labels: list[ObjectLabel], maps: FeatureMaps, state: DetectorState,
                   cfg: AlignmentConfig) -> list[FusionFeature | None]:
    """Fusion feature per label, ``None`` where it cannot be formed (no shape points, off-grid, zero vector)."""
    grid = state.cfg.grid
    dims = (state.cfg.shape_hidden, state.cfg.channels, state.cfg.motion_hidden)
    out: list[FusionFeature | None] = []
    for lab in labels:
        if not grid.contains(lab.box.center[:2]):
            out.append(None)
            continue
        try:
            geo = extract_geo(points, lab.box, maps, state, cfg) if cfg.use_sga else None
            mo = extract_motion(lab.box, maps, grid) if cfg.use_tma else None
            if geo is None and mo is None:
                out.append(None)
                continue
            out.append(fuse(geo, mo, lab.confidence, lab.class_id, dims))
        except CL3DError:
            out.append(None)
    return out

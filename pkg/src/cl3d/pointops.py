"""Non-learned point-set primitives: FPS, box cropping, self-coordinates and range strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CL3DError
from .scene_sim.types import Box3D, DeviceKind, ObjectLabel, PointFrame, wrap_angle

DEFAULT_SHAPE_POINTS = 16
DEFAULT_MIN_POINTS = 4
DEFAULT_CROP_MARGIN = 0.1
FAN_WIDTH_DEG = 60.0


def farthest_point_sample(points: np.ndarray, k: int, start: int = 0) -> tuple[np.ndarray, bool]:
    """Greedy maximin sampling.

    Each pick maximizes the distance to the closest already-picked point, ties
    going to the lowest index. When fewer than ``k`` points exist the last pick
    is repeated; the returned flag reports that padding.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n == 0:
        raise CL3DError("empty-shape", "cannot sample from an empty point set")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= start < n:
        raise IndexError(f"start index {start} outside [0, {n})")
    m = min(k, n)
    picked = np.empty(k, dtype=np.int64)
    picked[0] = start
    nearest = np.linalg.norm(points - points[start], axis=1)
    nearest[start] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(nearest))
        picked[i] = nxt
        np.minimum(nearest, np.linalg.norm(points - points[nxt], axis=1), out=nearest)
        nearest[picked[: i + 1]] = -1.0
    picked[m:] = picked[m - 1]
    return picked, m < k


def box_mask(points: np.ndarray, box: Box3D, margin: float = DEFAULT_CROP_MARGIN) -> np.ndarray:
    local = box.to_local(points)
    half = 0.5 * np.asarray(box.size) + margin
    return np.all(np.abs(local) <= half, axis=1)


def crop_points_in_box(frame, box: Box3D, margin: float = DEFAULT_CROP_MARGIN) -> np.ndarray:
    """Points (world coordinates) whose box-frame coordinates fall within ``size / 2 + margin``."""
    points = frame.points if isinstance(frame, PointFrame) else np.asarray(frame)
    return points[box_mask(points, box, margin)]


def normalize_to_self(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Rotate and translate points into the box frame. Metric extent is kept, no size rescaling."""
    return box.to_local(points)


@dataclass
class ShapeSample:
    points: np.ndarray  # (K, 3) box-frame coordinates
    source_box: Box3D
    source_count: int
    padded: bool


def sample_shape(points: np.ndarray, box: Box3D, k: int = DEFAULT_SHAPE_POINTS,
                 min_points: int = DEFAULT_MIN_POINTS, margin: float = DEFAULT_CROP_MARGIN) -> ShapeSample | None:
    """Crop, FPS-sample and normalize the shape of one object; ``None`` if too few points."""
    inside = crop_points_in_box(points, box, margin)
    if len(inside) < max(min_points, 1):
        return None
    local = normalize_to_self(inside, box)
    start = int(np.argmin(np.einsum("ij,ij->i", local, local)))
    idx, padded = farthest_point_sample(local, k, start)
    return ShapeSample(local[idx], box, len(inside), padded)


# -- range strategies -----------------------------------------------------------------------------


def _translate_label(label: ObjectLabel, offset: np.ndarray) -> ObjectLabel:
    center = tuple(float(c) for c in np.asarray(label.box.center) + offset)
    return replace(label, box=replace(label.box, center=center))


def range_normalize(frame: PointFrame, labels: list[ObjectLabel] | None = None):
    """Translate the frame so the device's forward range interval is centered on the origin.

    Velocities and yaws are untouched. The translation is recorded in
    ``extras['origin_offset']`` so detections can be mapped back.
    """
    shift = -frame.device.range_center
    offset = np.array([shift, 0.0, 0.0])
    device = frame.device
    if shift != 0.0:
        near, far = device.range_interval
        device = replace(device, range_interval=(near + shift, far + shift))
    out = frame.with_points(frame.points + offset.astype(np.float32), device) if shift != 0.0 else frame.with_points(frame.points)
    out.extras.update(frame.extras)
    out.extras["origin_offset"] = np.asarray(frame.extras.get("origin_offset", np.zeros(3))) + offset
    if labels is None:
        return out
    return out, [_translate_label(lab, offset) for lab in labels]


def _mirror_label(label: ObjectLabel) -> ObjectLabel:
    x, y, z = label.box.center
    box = Box3D((-x, -y, z), label.box.size, float(wrap_angle(label.box.yaw + math.pi)))
    return replace(label, box=box, velocity=(-label.velocity[0], -label.velocity[1]))


def range_symmetrize(frame: PointFrame, labels: list[ObjectLabel] | None = None):
    """Complete a fan with its point mirror through the sensor origin (x, y -> -x, -y)."""
    if frame.device.kind is not DeviceKind.SOLID_STATE:
        raise CL3DError("not-a-fan", "range symmetrization applies to solid-state frames only")
    mirrored = frame.points * np.array([-1.0, -1.0, 1.0], dtype=np.float32)
    out = frame.with_points(np.concatenate([frame.points, mirrored]))
    out.extras.update(frame.extras)
    out.extras["symmetrized"] = True
    if labels is None:
        return out
    return out, list(labels) + [_mirror_label(lab) for lab in labels]


def _rotate_xy(xy: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.stack([c * xy[:, 0] - s * xy[:, 1], s * xy[:, 0] + c * xy[:, 1]], axis=1)


def rotate_label(label: ObjectLabel, angle: float) -> ObjectLabel:
    x, y, z = label.box.center
    (rx, ry), = _rotate_xy(np.array([[x, y]]), angle)
    (vx, vy), = _rotate_xy(np.array([label.velocity]), angle)
    box = Box3D((float(rx), float(ry), z), label.box.size, float(wrap_angle(label.box.yaw + angle)))
    return replace(label, box=box, velocity=(float(vx), float(vy)))


def azimuth_deg(xy: np.ndarray) -> np.ndarray:
    """Azimuth in [0, 360) degrees."""
    return np.degrees(np.arctan2(xy[:, 1], xy[:, 0])) % 360.0


def fan_index(xy: np.ndarray, n_fans: int) -> np.ndarray:
    return np.minimum((azimuth_deg(xy) // (360.0 / n_fans)).astype(np.int64), n_fans - 1)


def range_split(frame: PointFrame, labels: list[ObjectLabel] | None = None, fan_width: float = FAN_WIDTH_DEG):
    """Split a 360 degree frame into fans, each rotated onto the forward fan ``[-w/2, w/2)``.

    Fan ``k`` covers azimuths ``[k*w, (k+1)*w)``. Points keep their original
    indices in ``extras['source_indices']``; each label goes to exactly one fan,
    the one containing its center.
    """
    if frame.device.kind is not DeviceKind.MECHANICAL:
        raise CL3DError("not-a-disc", "range split applies to mechanical frames only")
    n_fans = int(math.ceil(360.0 / fan_width))
    pts = np.asarray(frame.points, dtype=np.float64)
    point_fan = fan_index(pts[:, :2], n_fans)
    if labels is not None:
        centers = np.array([lab.box.center[:2] for lab in labels]).reshape(-1, 2)
        label_fan = fan_index(centers, n_fans) if len(labels) else np.zeros(0, dtype=np.int64)
    out = []
    for k in range(n_fans):
        angle = -math.radians(k * fan_width + fan_width / 2)
        idx = np.nonzero(point_fan == k)[0]
        sub = pts[idx].copy()
        sub[:, :2] = _rotate_xy(sub[:, :2], angle)
        fan = frame.with_points(sub)
        fan.extras.update(frame.extras)
        fan.extras.update(fan=k, fan_rotation=angle, source_indices=idx)
        if labels is None:
            out.append(fan)
        else:
            out.append((fan, [rotate_label(labels[j], angle) for j in np.nonzero(label_fan == k)[0]]))
    return out


def reassemble_fans(fans: list[PointFrame]) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-rotate split fans back to the sensor frame; returns (points, source indices)."""
    pts, idx = [], []
    for fan in fans:
        p = np.asarray(fan.points, dtype=np.float64).copy()
        p[:, :2] = _rotate_xy(p[:, :2], -fan.extras["fan_rotation"])
        pts.append(p)
        idx.append(fan.extras["source_indices"])
    return np.concatenate(pts), np.concatenate(idx)

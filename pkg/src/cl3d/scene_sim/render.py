"""Ray casting of a world state through a device model."""

from __future__ import annotations

import math

import numpy as np

from .types import DeviceModel, ObjectLabel, PointFrame, WorldState

GROUND = -1
MISS = -2


def ray_directions(device: DeviceModel) -> np.ndarray:
    """Unit ray directions on the device lattice, shape (n_elev, n_az, 3)."""
    el = np.radians(device.elevations())[:, None]
    az = np.radians(device.azimuths())[None, :]
    ce = np.cos(el)
    return np.stack(np.broadcast_arrays(ce * np.cos(az), ce * np.sin(az), np.sin(el) + 0 * az), axis=-1)


def ray_box_distance(dirs: np.ndarray, box) -> np.ndarray:
    """Distance along each unit ray from the origin to ``box`` (slab test); inf on a miss."""
    local = box.to_local(np.zeros((1, 3)))[0]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    d = np.empty_like(dirs)
    d[:, 0] = c * dirs[:, 0] + s * dirs[:, 1]
    d[:, 1] = -s * dirs[:, 0] + c * dirs[:, 1]
    d[:, 2] = dirs[:, 2]
    half = 0.5 * np.asarray(box.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - local) / d
        t2 = (half - local) / d
    t_near = np.max(np.minimum(t1, t2), axis=1)
    t_far = np.min(np.maximum(t1, t2), axis=1)
    hit = (t_near <= t_far) & (t_near > 0)  # origin never lies inside a box
    return np.where(hit, t_near, np.inf)


def _azimuth_window(box, azimuths_deg: np.ndarray, full_circle: bool) -> np.ndarray:
    l, w, _ = box.size
    corners = box.to_world(np.array([[sx * l / 2, sy * w / 2, 0.0] for sx in (-1, 1) for sy in (-1, 1)]))
    angles = np.degrees(np.arctan2(corners[:, 1], corners[:, 0]))
    ref = angles[0]
    rel = (angles - ref + 180.0) % 360.0 - 180.0
    lo, hi = ref + rel.min() - 1.0, ref + rel.max() + 1.0
    rel_az = (azimuths_deg - lo) % 360.0 if full_circle else azimuths_deg - lo
    return np.nonzero((rel_az >= 0) & (rel_az <= hi - lo))[0]


def cast_rays(world: WorldState, device: DeviceModel):
    """Noiseless nearest-hit distances and hit ids for every lattice ray.

    Returns ``(dirs (R,3), dist (R,), hit (R,))`` where ``hit`` is an object
    index, ``GROUND`` or ``MISS``.
    """
    lattice = ray_directions(device)
    n_el, n_az, _ = lattice.shape
    dirs = lattice.reshape(-1, 3)
    dist = np.full(len(dirs), np.inf)
    hit = np.full(len(dirs), MISS, dtype=np.int64)

    down = dirs[:, 2] < 0
    t_ground = np.full(len(dirs), np.inf)
    t_ground[down] = world.ground_z / dirs[down, 2]
    dist[down] = t_ground[down]
    hit[down] = GROUND

    az_deg = device.azimuths()
    for idx, obj in enumerate(world.objects):
        box = obj.box()
        cols = _azimuth_window(box, az_deg, full_circle=not device.is_fan)
        if len(cols) == 0:
            continue
        rays = (np.arange(n_el)[:, None] * n_az + cols[None, :]).ravel()
        t = ray_box_distance(dirs[rays], box)
        closer = t < dist[rays]
        dist[rays[closer]] = t[closer]
        hit[rays[closer]] = idx
    return dirs, dist, hit


def render_frame(world: WorldState, device: DeviceModel, seed: int, frame_index: int = 0, exact: bool = False):
    """Render one frame and its ground-truth labels.

    Range noise and dropout are drawn per ray from ``seed``. Only objects with
    at least one surviving return are labeled. ``frame.extras['hit_ids']``
    keeps the per-point object id (``GROUND`` for ground returns); with
    ``exact`` the float64 points are kept under ``extras['points_f64']``.
    """
    if not world.objects:
        raise ValueError("cannot render an empty world")
    dirs, dist, hit = cast_rays(world, device)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, device.range_noise_sigma, size=len(dist)) if device.range_noise_sigma > 0 else 0.0
    keep = rng.random(len(dist)) >= device.dropout_prob
    dist = dist + noise
    keep &= np.isfinite(dist) & (dist > 0) & (dist <= device.max_range)
    pts = dirs[keep] * dist[keep, None]
    hit = hit[keep]
    near, far = device.range_interval
    inside = (pts[:, 0] >= near) & (pts[:, 0] <= far)
    pts, hit = pts[inside], hit[inside]

    ids = np.array([o.object_id for o in world.objects])
    hit_ids = np.where(hit >= 0, ids[np.maximum(hit, 0)], GROUND)
    counts = np.bincount(hit[hit >= 0], minlength=len(world.objects))
    labels = [
        ObjectLabel(o.box(), o.class_id, (float(o.velocity[0]), float(o.velocity[1])), 1.0, o.object_id)
        for i, o in enumerate(world.objects)
        if counts[i] > 0
    ]
    frame = PointFrame(np.ascontiguousarray(pts, dtype=np.float32), world.time, device, frame_index)
    frame.extras["hit_ids"] = hit_ids
    if exact:
        frame.extras["points_f64"] = pts
    return frame, labels

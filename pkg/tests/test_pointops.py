import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cl3d.errors import CL3DError
from cl3d.pointops import (
    azimuth_deg,
    box_mask,
    crop_points_in_box,
    farthest_point_sample,
    normalize_to_self,
    range_normalize,
    range_split,
    range_symmetrize,
    reassemble_fans,
    rotate_label,
    sample_shape,
)
from cl3d.scene_sim import CAR, MECHANICAL_32, SOLID_STATE_60, Box3D, ObjectLabel, SimConfig, make_world, render_frame
from cl3d.scene_sim.types import PointFrame

from oracles import fps_exhaustive

EPS32 = np.finfo(np.float32).eps


def frame_of(points, device, index=0):
    return PointFrame(np.asarray(points, dtype=np.float32), 0.0, device, index)


def pairwise(p):
    p = np.asarray(p, dtype=np.float64)
    return np.linalg.norm(p[:, None] - p[None], axis=-1)


# -- farthest point sampling ----------------------------------------------------------------------


def test_fps_matches_exhaustive_oracle_on_200_sets():
    rng = np.random.default_rng(0)
    for trial in range(200):
        n = int(rng.integers(1, 11))
        k = int(rng.integers(1, 6))
        # integer lattice coordinates make distance ties common
        pts = rng.integers(-2, 3, size=(n, 3)).astype(float) if trial % 2 else rng.normal(size=(n, 3))
        start = int(rng.integers(0, n))
        idx, padded = farthest_point_sample(pts, k, start)
        assert idx.tolist() == fps_exhaustive(pts, k, start)
        assert padded == (n < k)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 12), st.just(3)), elements=st.floats(-5, 5)),
       st.integers(1, 8))
def test_fps_properties(pts, k):
    idx, padded = farthest_point_sample(pts, k)
    assert len(idx) == k
    distinct = min(k, len(pts))
    assert len(set(idx[:distinct].tolist())) == distinct
    assert idx[0] == 0
    assert padded == (len(pts) < k)


def test_fps_rejects_bad_input():
    with pytest.raises(CL3DError):
        farthest_point_sample(np.zeros((0, 3)), 3)
    with pytest.raises(ValueError):
        farthest_point_sample(np.zeros((3, 3)), 0)
    with pytest.raises(IndexError):
        farthest_point_sample(np.zeros((3, 3)), 2, start=5)


# -- cropping and self-coordinates ----------------------------------------------------------------


def test_crop_respects_rotation_and_margin():
    box = Box3D((10.0, 5.0, 0.0), (4.0, 2.0, 2.0), math.pi / 2)
    # along the rotated length axis (world y) the half-extent is 2 m
    pts = np.array([[10.0, 6.9, 0.0], [10.0, 7.05, 0.0], [10.0, 7.2, 0.0], [11.9, 5.0, 0.0]])
    assert box_mask(pts, box, margin=0.1).tolist() == [True, True, False, False]
    assert len(crop_points_in_box(pts, box, margin=0.0)) == 1


@given(st.floats(-math.pi, math.pi), st.floats(-20, 20), st.floats(-20, 20))
def test_self_coordinates_are_pose_free(yaw, x, y):
    local = np.array([[1.0, 0.5, 0.2], [-1.5, -0.3, 0.0], [0.2, 0.8, -0.4]])
    box = Box3D((x, y, -1.0), (4.0, 2.0, 1.5), yaw)
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    world = local @ rot.T + np.array([x, y, -1.0])
    np.testing.assert_allclose(normalize_to_self(world, box), local, atol=1e-9)


def test_sample_shape_pads_and_rejects():
    box = Box3D((0.0, 0.0, 0.0), (2.0, 2.0, 2.0), 0.0)
    pts = np.array([[0.1, 0.0, 0.0], [0.5, 0.5, 0.0], [-0.5, 0.2, 0.1], [0.0, -0.6, 0.3], [5.0, 5.0, 5.0]])
    s = sample_shape(pts, box, k=8, min_points=4)
    assert s is not None and s.padded and s.source_count == 4 and s.points.shape == (8, 3)
    assert sample_shape(pts, box, k=8, min_points=5) is None


# -- range normalization --------------------------------------------------------------------------


def test_solid_state_range_maps_to_centered_interval():
    pts = np.array([[0.0, 0.0, -1.0], [100.0, 0.0, 0.0], [37.5, 4.0, 0.5], [62.25, -8.0, 1.0]])
    out = range_normalize(frame_of(pts, SOLID_STATE_60))
    assert out.device.range_interval == (-50.0, 50.0)
    assert out.points[:, 0].min() == -50.0 and out.points[:, 0].max() == 50.0
    np.testing.assert_array_equal(out.extras["origin_offset"], [-50.0, 0.0, 0.0])
    np.testing.assert_array_equal(pairwise(out.points), pairwise(pts))


def test_mechanical_frame_is_unchanged():
    pts = np.random.default_rng(1).uniform(-50, 50, (100, 3))
    frame = frame_of(pts, MECHANICAL_32)
    out = range_normalize(frame)
    assert out.points.tobytes() == frame.points.tobytes()
    assert out.device == frame.device


@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.just(3)), elements=st.floats(0, 100, width=32)))
def test_range_normalize_preserves_distances(pts):
    frame = frame_of(pts, SOLID_STATE_60)
    out = range_normalize(frame)
    d_in, d_out = pairwise(frame.points), pairwise(out.points)
    # points are stored as float32: one rounding per translated coordinate
    assert np.max(np.abs(d_in - d_out)) <= 4 * EPS32 * 100.0


def test_range_normalize_moves_labels_but_not_velocity():
    lab = ObjectLabel(Box3D((30.0, 2.0, -0.9), (4.0, 2.0, 1.5), 0.4), CAR, (1.0, 2.0))
    _, (moved,) = range_normalize(frame_of(np.zeros((1, 3)), SOLID_STATE_60), [lab])
    assert moved.box.center == (-20.0, 2.0, -0.9)
    assert moved.velocity == lab.velocity and moved.box.yaw == lab.box.yaw


# -- symmetrization and split ---------------------------------------------------------------------


def test_symmetrize_doubles_and_mirrors():
    pts = np.array([[10.0, 2.0, -1.0], [20.0, -3.0, 0.0]])
    lab = ObjectLabel(Box3D((10.0, 2.0, -0.9), (4.0, 2.0, 1.5), 0.3), CAR, (1.0, 0.5))
    out, labels = range_symmetrize(frame_of(pts, SOLID_STATE_60), [lab])
    assert len(out) == 4 and len(labels) == 2
    np.testing.assert_array_equal(out.points[2:], [[-10.0, -2.0, -1.0], [-20.0, 3.0, 0.0]])
    assert labels[1].box.center == (-10.0, -2.0, -0.9)
    assert labels[1].velocity == (-1.0, -0.5)
    assert labels[1].box.yaw == pytest.approx(0.3 - math.pi)
    with pytest.raises(CL3DError):
        range_symmetrize(frame_of(pts, MECHANICAL_32))


def test_split_partitions_points_and_labels():
    world = make_world(SimConfig(), 8)[0]
    frame, labels = render_frame(world, MECHANICAL_32, 0)
    fans = range_split(frame, labels)
    assert len(fans) == 6
    idx = np.concatenate([f.extras["source_indices"] for f, _ in fans])
    assert sorted(idx.tolist()) == list(range(len(frame)))
    assert sum(len(lab) for _, lab in fans) == len(labels)
    for fan, fan_labels in fans:
        az = (azimuth_deg(fan.points[:, :2].astype(np.float64)) + 180.0) % 360.0 - 180.0
        assert np.all(np.abs(az) <= 30.0 + 1e-3)
        for lab in fan_labels:
            assert abs(math.degrees(math.atan2(lab.box.center[1], lab.box.center[0]))) <= 30.0 + 1e-6


def test_split_reassembles_to_original():
    world = make_world(SimConfig(), 9)[0]
    frame, _ = render_frame(world, MECHANICAL_32, 0)
    pts, idx = reassemble_fans(range_split(frame))
    restored = np.empty_like(pts)
    restored[idx] = pts
    np.testing.assert_allclose(restored, frame.points, atol=1e-4)


def test_split_requires_mechanical():
    with pytest.raises(CL3DError):
        range_split(frame_of(np.zeros((1, 3)), SOLID_STATE_60))


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_rotate_label_composes(a, b):
    lab = ObjectLabel(Box3D((10.0, 3.0, -0.9), (4.0, 2.0, 1.5), 0.2), CAR, (2.0, -1.0))
    once = rotate_label(lab, a + b)
    twice = rotate_label(rotate_label(lab, a), b)
    np.testing.assert_allclose(once.box.center, twice.box.center, atol=1e-9)
    np.testing.assert_allclose(once.velocity, twice.velocity, atol=1e-9)
    assert math.cos(once.box.yaw - twice.box.yaw) == pytest.approx(1.0)

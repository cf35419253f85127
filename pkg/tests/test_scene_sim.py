import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cl3d.scene_sim import (
    BARRIER,
    CAR,
    MECHANICAL_32,
    SOLID_STATE_60,
    Box3D,
    BenchmarkConfig,
    DeviceKind,
    DeviceModel,
    ObjectLabel,
    SimConfig,
    WorldState,
    make_benchmark,
    make_world,
    render_frame,
)
from cl3d.scene_sim.io import (
    frame_from_bytes,
    frame_to_bytes,
    labels_from_jsonl,
    labels_to_jsonl,
    read_frame,
    write_frame,
)
from cl3d.scene_sim.render import GROUND
from cl3d.scene_sim.types import SimObject, wrap_angle

from oracles import ray_hit_distance


def one_object_world(center, size=(4.0, 2.0, 1.5), yaw=0.0, class_id=CAR, velocity=(0.0, 0.0)):
    obj = SimObject(0, class_id, np.array(center, dtype=float), np.array(size, dtype=float), yaw,
                    np.array(velocity, dtype=float))
    return WorldState([obj], time=0.0)


def small_bench_config(**kw) -> BenchmarkConfig:
    base = dict(source_sequences=2, target_train_sequences=2, target_eval_sequences=2, source_eval_sequences=1)
    base.update(kw)
    return BenchmarkConfig(**base)


# -- device model ---------------------------------------------------------------------------------


def test_presets_match_the_documented_lattices():
    assert MECHANICAL_32.num_beams == 32
    assert MECHANICAL_32.horizontal_fov == (-180.0, 180.0)
    assert MECHANICAL_32.azimuth_step == 0.4
    assert MECHANICAL_32.range_interval == (-50.0, 50.0)
    assert SOLID_STATE_60.horizontal_fov == (-30.0, 30.0)
    assert SOLID_STATE_60.azimuth_step == SOLID_STATE_60.elevation_step == 0.1
    assert SOLID_STATE_60.range_interval == (0.0, 100.0)
    assert MECHANICAL_32.range_noise_sigma == SOLID_STATE_60.range_noise_sigma == 0.02


def test_fan_width_360_only_for_mechanical():
    with pytest.raises(ValueError):
        DeviceModel(DeviceKind.SOLID_STATE, (-10, 10), (-180, 180), 0.1, 100, (0, 100), elevation_step=0.1)
    with pytest.raises(ValueError):
        DeviceModel(DeviceKind.MECHANICAL, (-10, 10), (-30, 30), 0.4, 50, (-50, 50), num_beams=8)


def test_device_rejects_bad_probability_and_range():
    with pytest.raises(ValueError):
        DeviceModel(DeviceKind.SOLID_STATE, (-10, 10), (-30, 30), 0.1, 100, (0, 100), elevation_step=0.1,
                    dropout_prob=1.5)
    with pytest.raises(ValueError):
        DeviceModel(DeviceKind.SOLID_STATE, (-10, 10), (-30, 30), 0.1, 100, (0, 120), elevation_step=0.1)


def test_device_dict_round_trip():
    for dev in (MECHANICAL_32, SOLID_STATE_60):
        assert DeviceModel.from_dict(dev.to_dict()) == dev


# -- world generation -----------------------------------------------------------------------------


def test_static_car_does_not_move():
    cfg = SimConfig(num_cars=1, num_barriers=0, parked_fraction=1.0)
    s0, s1 = make_world(cfg, 7)
    np.testing.assert_array_equal(s0.objects[0].center, s1.objects[0].center)


def test_moving_car_advances_velocity_times_period():
    cfg = SimConfig(num_cars=1, num_barriers=0, parked_fraction=0.0, car_speed_min=10.0, car_speed_max=10.0,
                    frame_period=0.1)
    s0, s1 = make_world(cfg, 3)
    shift = s1.objects[0].center - s0.objects[0].center
    assert math.hypot(shift[0], shift[1]) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(shift[:2], 0.1 * s0.objects[0].velocity, atol=1e-12)


def test_world_is_deterministic():
    cfg = SimConfig(num_cars=20)
    a, b = make_world(cfg, 42), make_world(cfg, 42)
    for sa, sb in zip(a, b):
        for oa, ob in zip(sa.objects, sb.objects):
            np.testing.assert_array_equal(oa.center, ob.center)
            assert oa.yaw == ob.yaw


@pytest.mark.parametrize("bad", [dict(frames=0), dict(frames=1), dict(car_speed_min=-1.0)])
def test_world_rejects_invalid_config(bad):
    with pytest.raises(ValueError):
        make_world(SimConfig(**bad), 0)


@given(st.integers(0, 2 ** 31 - 1))
def test_world_invariants(seed):
    states = make_world(SimConfig(frames=3), seed)
    ids = [o.object_id for o in states[0].objects]
    assert len(ids) == len(set(ids))
    for s in states:
        for o in s.objects:
            assert np.all(o.size > 0)
            assert -math.pi <= o.yaw < math.pi


@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_angle_range(a):
    w = float(wrap_angle(a))
    assert -math.pi <= w < math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


# -- rendering ------------------------------------------------------------------------------------


def test_car_behind_solid_state_sensor_is_invisible():
    frame, labels = render_frame(one_object_world((-10.0, 0.0, -0.9)), SOLID_STATE_60, seed=0)
    assert labels == []
    assert not np.any(frame.extras["hit_ids"] == 0)


def test_point_count_gap_between_presets():
    world = make_world(SimConfig(), 11)[0]
    mech, _ = render_frame(world, MECHANICAL_32, 0)
    solid, _ = render_frame(world, SOLID_STATE_60, 0)
    ratio = max(len(mech), len(solid)) / min(len(mech), len(solid))
    assert ratio >= 2.0


def test_noiseless_box_points_lie_on_the_surface():
    box_world = one_object_world((10.0, 0.0, 0.0), size=(4.0, 2.0, 1.5))
    frame, labels = render_frame(box_world, MECHANICAL_32.noiseless(), 0, exact=True)
    pts = frame.extras["points_f64"][frame.extras["hit_ids"] == 0]
    assert len(pts) > 0 and len(labels) == 1
    local = np.abs(labels[0].box.to_local(pts)) - 0.5 * np.array([4.0, 2.0, 1.5])
    # on the surface: inside or on every slab, and on at least one face
    assert np.all(local.max(axis=1) < 1e-6)
    assert np.all(np.abs(local.max(axis=1)) < 1e-6)


@pytest.mark.parametrize("device", [MECHANICAL_32, SOLID_STATE_60], ids=["mechanical", "solid_state"])
def test_render_matches_brute_force_ray_oracle(device):
    rng = np.random.default_rng(5)
    objs = []
    for n in range(3):
        center = np.array([rng.uniform(6, 30), rng.uniform(-8, 8), -0.9])
        objs.append(SimObject(n, CAR, center, np.array([4.2, 1.8, 1.6]), float(rng.uniform(-3, 3)), np.zeros(2)))
    world = WorldState(objs, 0.0)
    frame, _ = render_frame(world, device.noiseless(), 0, exact=True)
    pts = frame.extras["points_f64"]
    boxes = [(o.center, o.size, o.yaw) for o in objs]
    sample = rng.choice(len(pts), size=min(400, len(pts)), replace=False)
    for i in sample:
        r = np.linalg.norm(pts[i])
        assert abs(ray_hit_distance(pts[i] / r, boxes, world.ground_z) - r) < 1e-6


def test_ground_points_sit_on_the_ground_plane():
    frame, _ = render_frame(one_object_world((15.0, 3.0, -0.9)), MECHANICAL_32.noiseless(), 0, exact=True)
    ground = frame.extras["points_f64"][frame.extras["hit_ids"] == GROUND]
    assert np.all(np.abs(ground[:, 2] + 1.7) < 1e-6)


@pytest.mark.parametrize("device", [MECHANICAL_32, SOLID_STATE_60], ids=["mechanical", "solid_state"])
def test_frame_invariants(device):
    world = make_world(SimConfig(), 4)[0]
    frame, labels = render_frame(world, device, 9)
    r = np.linalg.norm(frame.points.astype(np.float64), axis=1)
    assert np.all(r <= device.max_range + 1e-3)
    az = np.degrees(np.arctan2(frame.points[:, 1], frame.points[:, 0]))
    if device.is_fan:
        assert az.min() >= -30.0 - 1e-3 and az.max() <= 30.0 + 1e-3
    else:
        assert az.max() - az.min() > 359.0
    hit_ids = set(frame.extras["hit_ids"].tolist())
    assert {lab.object_id for lab in labels} == hit_ids - {GROUND}
    assert all(lab.confidence == 1.0 for lab in labels)


def test_render_is_deterministic():
    world = make_world(SimConfig(), 1)[0]
    a, la = render_frame(world, SOLID_STATE_60, 3)
    b, lb = render_frame(world, SOLID_STATE_60, 3)
    assert a.points.tobytes() == b.points.tobytes()
    assert la == lb


# -- serialization --------------------------------------------------------------------------------


def test_frame_bytes_round_trip(tmp_path):
    world = make_world(SimConfig(), 2)[0]
    frame, _ = render_frame(world, SOLID_STATE_60, 0)
    data = frame_to_bytes(frame)
    assert data[:4] == b"CLPF"
    back = frame_from_bytes(data)
    assert back.points.tobytes() == frame.points.tobytes()
    assert back.device.kind is DeviceKind.SOLID_STATE
    write_frame(tmp_path / "f.clpf", frame)
    assert read_frame(tmp_path / "f.clpf").points.tobytes() == frame.points.tobytes()


def test_frame_bytes_rejects_corruption():
    frame, _ = render_frame(make_world(SimConfig(), 2)[0], MECHANICAL_32, 0)
    data = frame_to_bytes(frame)
    with pytest.raises(ValueError):
        frame_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        frame_from_bytes(data[:-5])


def test_labels_jsonl_round_trip():
    labels = [ObjectLabel(Box3D((1.0, 2.0, -0.9), (4.5, 1.9, 1.6), 0.3), CAR, (3.0, -1.0), 0.42, 7),
              ObjectLabel(Box3D((-5.0, 0.5, -1.0), (2.6, 0.7, 1.1), -2.0), BARRIER)]
    text = labels_to_jsonl(labels)
    assert len(text.splitlines()) == 2
    assert labels_from_jsonl(text) == labels


# -- benchmark ------------------------------------------------------------------------------------


def test_benchmark_splits_have_disjoint_seeds_and_pairs():
    bench = make_benchmark(small_bench_config())
    seeds = [set(s.seeds) for s in bench.splits()]
    for a in range(len(seeds)):
        for b in range(a + 1, len(seeds)):
            assert not seeds[a] & seeds[b]
    for split in bench.splits():
        prev, cur = split.frames(0)
        assert cur.frame_index == prev.frame_index + 1
    assert bench.source.device.kind is DeviceKind.MECHANICAL
    assert bench.target_train.device.kind is DeviceKind.SOLID_STATE


def test_benchmark_is_deterministic():
    a, b = make_benchmark(small_bench_config()), make_benchmark(small_bench_config())
    for sa, sb in zip(a.splits(), b.splits()):
        for i in range(len(sa)):
            assert sa.frames(i)[1].points.tobytes() == sb.frames(i)[1].points.tobytes()


def test_parallel_rendering_matches_serial():
    cfg = small_bench_config()
    a, b = make_benchmark(cfg, workers=1), make_benchmark(cfg, workers=2)
    for sa, sb in zip(a.splits(), b.splits()):
        for i in range(len(sa)):
            assert sa.frames(i)[1].points.tobytes() == sb.frames(i)[1].points.tobytes()


def test_benchmark_rejects_single_frame_sequences():
    with pytest.raises(ValueError):
        make_benchmark(small_bench_config(sim=SimConfig(frames=1)))


def test_target_train_label_access_is_audited():
    bench = make_benchmark(small_bench_config())
    assert bench.target_train.withheld and not bench.target_train.label_access_audit
    bench.target_train.frames(0)
    assert not bench.target_train.label_access_audit
    bench.target_train.labels(0)
    assert bench.target_train.label_access_audit
    bench.source.labels(0)
    assert not bench.source.label_access_audit


def test_benchmark_save_load(tmp_path):
    bench = make_benchmark(small_bench_config())
    bench.save(tmp_path)
    back = type(bench).load(tmp_path)
    assert back.config == bench.config
    for sa, sb in zip(bench.splits(), back.splits()):
        assert sa.withheld == sb.withheld
        for i in range(len(sa)):
            assert sa.frames(i)[1].points.tobytes() == sb.frames(i)[1].points.tobytes()
    assert back.source.labels(0) == bench.source.labels(0)

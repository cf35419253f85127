"""The twelve acceptance criteria, each at its stated tolerance.

Each test records one PASS/FAIL line (printed in the terminal summary) before
asserting. Criteria 7-9 share one three-seed matrix on the default benchmark,
which dominates the runtime of the whole suite (about 12 minutes on one core).
Criteria that this implementation does not reach are strict expected failures
whose analysis lives in the decisions ledger; if one starts passing, the
strict marker turns that into a test failure so the marker gets removed.
"""

import hashlib
import math
import statistics
import time

import numpy as np
import pytest

from acceptance_log import record
from cl3d import pipeline
from cl3d.alignment import shape_forward
from cl3d.config import ExperimentConfig, Mode, RangeStrategy, load_config, set_key
from cl3d.detector import BevGrid, DetectorConfig, TrainConfig, TrainSample, init_state
from cl3d.detector.grid import label_cell
from cl3d.detector.train import AugmentConfig, train_step
from cl3d.metrics import GT, Det, average_precision, closed_gap
from cl3d.pointops import farthest_point_sample, range_normalize, sample_shape
from cl3d.prototype import EMA_ALPHA, Prototype, build_reweight_map, effective_weight, ema_update
from cl3d.scene_sim import MECHANICAL_32, SOLID_STATE_60, Box3D, ObjectLabel, SimConfig, make_world, render_frame
from cl3d.scene_sim.types import PointFrame

from gradcheck import worst_gradient_error
from oracles import ap_all_cutoffs, fps_exhaustive
from test_metrics import pr_example

SEEDS = (0, 1, 2)
MARGIN = 0.03


# -- 1 --------------------------------------------------------------------------------------------


def test_01_gradient_exactness():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        for variant, err in worst_gradient_error(1000 + seed).items():
            worst[variant] = max(worst.get(variant, 0.0), err)
    elapsed = time.perf_counter() - t0
    overall = max(worst.values())
    ok = overall < 1e-4 and elapsed < 60
    names = {("cls", False): "cls", ("cls", True): "cls*W", ("reg", False): "reg", ("motion", False): "motion"}
    detail = ", ".join(f"{names[k]} {v:.1e}" for k, v in worst.items())
    record(1, ok, f"20 instances, worst rel. error {detail}; {elapsed:.1f}s")
    assert ok


# -- 2 --------------------------------------------------------------------------------------------


def test_02_fps_oracle_equivalence():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    mismatches = 0
    for trial in range(200):
        n, k = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        pts = rng.integers(-2, 3, (n, 3)).astype(float) if trial % 2 else rng.uniform(-1, 1, (n, 3))
        start = int(rng.integers(n))
        if farthest_point_sample(pts, k, start)[0].tolist() != fps_exhaustive(pts, k, start):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 5
    record(2, ok, f"200 random sets (half on an integer lattice), {mismatches} mismatches; {elapsed:.2f}s")
    assert ok


# -- 3 --------------------------------------------------------------------------------------------


def test_03_ema_closed_form():
    rng = np.random.default_rng(3)
    p0, v = rng.normal(size=96), rng.normal(size=96)
    errs = {}
    for n in (1, 10, 100):
        proto = Prototype(p0.copy(), True)
        for _ in range(n):
            proto = ema_update(proto, v)
        a = EMA_ALPHA ** n
        errs[n] = float(np.max(np.abs(proto.vector - (a * p0 + (1 - a) * v))))
    ok = EMA_ALPHA == 0.99 and max(errs.values()) < 1e-9
    record(3, ok, "alpha=0.99, max deviation " + ", ".join(f"n={n}: {e:.1e}" for n, e in errs.items()))
    assert ok


# -- 4 --------------------------------------------------------------------------------------------


def _random_labels(rng, grid, n):
    labels = []
    while len(labels) < n:
        x, y = rng.uniform(-0.9 * grid.extent, 0.9 * grid.extent, 2)
        # keep centers out of every other kernel so each center sees only its own peak
        if all(math.hypot(x - l.box.center[0], y - l.box.center[1]) > 10.0 for l in labels):
            size = tuple(rng.uniform([3.0, 1.5, 1.4], [5.5, 2.2, 1.8]))
            labels.append(ObjectLabel(Box3D((x, y, -0.9), size, float(rng.uniform(-3, 3))), 0))
    return labels


def test_04_reweight_formula():
    rng = np.random.default_rng(4)
    grid = BevGrid(50.0, 128)
    peak_err, lo, hi = 0.0, 1.0, 0.0
    for _ in range(1000):
        labels = _random_labels(rng, grid, int(rng.integers(1, 8)))
        s = rng.uniform(0, 1, len(labels))
        w = build_reweight_map(labels, list(s), grid, (0,))
        lo, hi = min(lo, w.min()), max(hi, w.max())
        for lab, sp in zip(labels, s):
            i, j = label_cell(lab, grid)
            peak_err = max(peak_err, abs(w[i, j, 0] - sp))

    # training steps: W from unit similarities with a unit background floor vs plain ST
    cfg = DetectorConfig(resolution=32, extent=16.0, hidden=8, channels=8, motion_hidden=8, shape_hidden=8)
    tcfg = TrainConfig(batch_size=2, augment=AugmentConfig(enabled=False))
    samples = []
    for n in range(6):
        labels = _random_labels(rng, cfg.grid, 2)
        pts = np.concatenate([rng.normal(l.box.center, [1.5, 0.8, 0.5], (40, 3)) for l in labels])
        samples.append(TrainSample(pts, pts + 0.1, labels, False, str(n)))

    def unit_weights(state, batch, maps):
        return [effective_weight(build_reweight_map(s.labels, [1.0] * len(s.labels), cfg.grid, (0,)), 1.0)
                for s in batch]

    st, cl = init_state(cfg, 0), init_state(cfg, 0)
    identical = True
    for start in range(0, 6, 2):
        batch = samples[start:start + 2]
        train_step(st, batch, tcfg)
        train_step(cl, batch, tcfg, weight_provider=unit_weights)
        identical &= all(st.params[k].tobytes() == cl.params[k].tobytes() for k in st.params)
    ok = peak_err < 1e-6 and lo >= 0.0 and hi <= 1.0 and identical
    record(4, ok, f"1000 configs: peak error {peak_err:.1e}, W in [{lo:.3f}, {hi:.3f}]; "
                  f"s_p=1,w_bg=1 steps bit-identical to ST: {identical}")
    assert ok


# -- 5 --------------------------------------------------------------------------------------------


def test_05_closed_gap_arithmetic():
    a = closed_gap(0.705, 0.363, 0.807)
    b = closed_gap(0.641, 0.379, 0.807)
    ok = abs(a - 77.03) <= 0.01 and abs(b - 61.21) <= 0.01
    record(5, ok, f"(0.705, 0.363, 0.807) -> {a:.4f}%; (0.641, 0.379, 0.807) -> {b:.4f}%")
    assert ok


# -- 6 --------------------------------------------------------------------------------------------


def test_06_range_normalization():
    world = make_world(SimConfig(num_cars=20), 6)[0]
    solid, _ = render_frame(world, SOLID_STATE_60, 0)
    # pin the frame's forward extent to exactly [0, 100]
    pts = np.concatenate([solid.points, [[0.0, 0.0, -1.0], [100.0, 0.0, 0.0]]]).astype(np.float32)
    frame = PointFrame(pts, 0.0, SOLID_STATE_60, 0)
    out = range_normalize(frame)
    span_ok = out.device.range_interval == (-50.0, 50.0) and out.points[:, 0].min() == -50.0 \
        and out.points[:, 0].max() == 50.0
    sub = np.random.default_rng(0).choice(len(pts), 2000, replace=False)
    a, b = pts[sub].astype(np.float64), out.points[sub].astype(np.float64)
    d_in = np.linalg.norm(a[:, None] - a[None], axis=-1)
    d_out = np.linalg.norm(b[:, None] - b[None], axis=-1)
    dist_err = float(np.max(np.abs(d_in - d_out)))
    # points are float32: a shifted coordinate rounds once, so distances agree to float32 precision
    tol = 2 * np.finfo(np.float32).eps * 100.0
    mech, _ = render_frame(world, MECHANICAL_32, 0)
    mech_out = range_normalize(mech)
    mech_ok = mech_out.points.tobytes() == mech.points.tobytes() and mech_out.device == mech.device
    ok = span_ok and dist_err <= tol and mech_ok
    record(6, ok, f"[0,100] -> [{out.points[:, 0].min():g},{out.points[:, 0].max():g}], max distance change "
                  f"{dist_err:.1e} m (float32 bound {tol:.1e}); mechanical unchanged: {mech_ok}")
    assert ok


# -- 7, 8, 9: the three-seed matrix -----------------------------------------------------------------


MATRIX_ARMS = [a for a in pipeline.MATRIX_ARMS if a[0] is not Mode.ORACLE] + [
    (Mode.CL3D, RangeStrategy.RN, False, False)]


@pytest.fixture(scope="module")
def matrix(tmp_path_factory):
    t0 = time.perf_counter()
    rows = pipeline.run_matrix(ExperimentConfig(), list(SEEDS), tmp_path_factory.mktemp("matrix"), MATRIX_ARMS)
    elapsed = time.perf_counter() - t0
    by_method: dict[str, dict[int, float]] = {}
    for r in rows:
        by_method.setdefault(r["method"], {})[r["seed"]] = r["mAP"]
    return by_method, elapsed


def _median(by_method, name):
    return statistics.median(by_method[name].values())


def _fmt(by_method, name):
    seeds = ", ".join(f"{by_method[name][s]:.4f}" for s in SEEDS)
    return f"{_median(by_method, name):.4f} [{seeds}]"


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="ordering holds but the CL3D-ST margin stays below 0.03; see decisions ledger")
def test_07_cl3d_beats_st_beats_dt(matrix):
    by, elapsed = matrix
    cl, st, dt = (_median(by, n) for n in ("CL3D+RN", "ST+RN", "DT+RN"))
    ordering = cl > st > dt
    ok = ordering and cl - st >= MARGIN and elapsed < 30 * 60
    record(7, ok, f"median mAP CL3D {_fmt(by, 'CL3D+RN')} > ST {_fmt(by, 'ST+RN')} > DT {_fmt(by, 'DT+RN')}: "
                  f"{ordering}; margin {cl - st:.4f} (floor {MARGIN}); matrix {elapsed / 60:.1f} min")
    assert ordering, "strict ordering is the hard part of this criterion"
    assert cl - st >= MARGIN
    assert elapsed < 30 * 60


@pytest.mark.slow
def test_08_module_ablation(matrix):
    by, _ = matrix
    full = _median(by, "CL3D+RN")
    singles = {n: _median(by, n) for n in ("CL3D w/o SGA+RN", "CL3D w/o TMA+RN")}
    none = _median(by, "CL3D w/o TMA & SGA+RN")
    ok = all(full >= v >= none for v in singles.values())
    record(8, ok, f"median mAP full {full:.4f}, w/o SGA {singles['CL3D w/o SGA+RN']:.4f}, "
                  f"w/o TMA {singles['CL3D w/o TMA+RN']:.4f}, no module {none:.4f}")
    assert ok


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="ST+RN wins clearly, but range split also beats plain ST; see decisions ledger")
def test_09_range_strategies(matrix):
    by, _ = matrix
    rn, plain, sym, split = (_median(by, n) for n in ("ST+RN", "ST", "ST+RSym", "ST+RSp"))
    ok = rn > plain >= max(sym, split)
    record(9, ok, f"median mAP ST+RN {_fmt(by, 'ST+RN')}, ST {_fmt(by, 'ST')}, ST+RSym {_fmt(by, 'ST+RSym')}, "
                  f"ST+RSp {_fmt(by, 'ST+RSp')}")
    assert rn > plain, "range normalization must beat plain self-training"
    assert plain >= max(sym, split)


# -- 10 -------------------------------------------------------------------------------------------


def test_10_average_precision():
    dets, gts = pr_example()
    example = average_precision(dets, gts, 0.5).ap
    example_ok = example == pytest.approx(1 / 3 + 1 / 3 * 0.75 + 1 / 3 * 0.75, abs=1e-12) and round(example, 4) == 0.8333
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        gts = [GT(str(f), *rng.uniform(0, 6, 2), 0) for f in range(2) for _ in range(rng.integers(1, 5))]
        dets = [Det(str(f), *rng.uniform(0, 6, 2), 0, float(rng.random()))
                for f in range(2) for _ in range(rng.integers(0, 7))]
        for t in (0.5, 1.0, 2.0, 4.0):
            ours = average_precision(dets, gts, t).ap
            ref = ap_all_cutoffs([(d.frame, d.x, d.y, d.class_id, d.score) for d in dets],
                                 [(g.frame, g.x, g.y, g.class_id) for g in gts], t)
            worst = max(worst, abs(ours - ref))
    ok = example_ok and worst < 1e-12
    record(10, ok, f"hand example AP {example:.4f}; 100 random instances, max diff to brute force {worst:.1e}")
    assert ok


# -- 11 -------------------------------------------------------------------------------------------


def test_11_sga_rigid_invariance():
    world = make_world(SimConfig(num_cars=12, num_barriers=0), 11)[0]
    frame, labels = render_frame(world, MECHANICAL_32, 0)
    pts = frame.points.astype(np.float64)
    box = max(labels, key=lambda l: int(np.sum(np.all(np.abs(l.box.to_local(pts)) <= 2.5, axis=1)))).box
    state = init_state(DetectorConfig(dtype="float64"), 0)

    def f_local(p, b):
        return shape_forward(state.params, sample_shape(p, b).points[None])[0][0]

    ref = f_local(pts, box)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        theta = rng.uniform(-math.pi, math.pi)
        t = np.array([*rng.uniform(-40, 40, 2), rng.uniform(-2, 2)])
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        moved = pts @ rot.T + t
        center = rot @ np.array(box.center) + t
        worst = max(worst, float(np.max(np.abs(f_local(moved, Box3D(tuple(center), box.size, box.yaw + theta))
                                                - ref))))
    ok = worst < 1e-6
    record(11, ok, f"50 rigid transforms of frame and box, max |delta f_local| {worst:.1e}")
    assert ok


# -- 12 -------------------------------------------------------------------------------------------


def test_12_reproducibility(tmp_path):
    cfg = ExperimentConfig()
    for k, v in {"benchmark.source_sequences": "6", "benchmark.target_train_sequences": "6",
                 "benchmark.target_eval_sequences": "4", "benchmark.source_eval_sequences": "2",
                 "pipeline.epochs_source": "2", "pipeline.mode": "CL3D"}.items():
        set_key(cfg, k, v)
    first = tmp_path / "first"
    pipeline.run_experiment(cfg, first, pipeline.StageCache())
    replay = load_config(first / "config.resolved.cfg")
    pipeline.run_experiment(replay, tmp_path / "again", pipeline.StageCache())
    digests = {}
    for name in ("metrics.json", "metrics.csv"):
        digests[name] = [hashlib.sha256((d / name).read_bytes()).hexdigest() for d in (first, tmp_path / "again")]
    ok = all(a == b for a, b in digests.values())
    record(12, ok, "CL3D run replayed from its resolved-config snapshot: "
                   + ", ".join(f"{n} {'identical' if a == b else 'DIFFERENT'} ({a[:12]})"
                               for n, (a, b) in digests.items()))
    assert ok

"""Source pretraining, pseudo-labeling, prototype-reweighted self-training, and evaluation."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._fs import atomic_write_text
from .alignment import label_features, make_shape_aux
from .config import ExperimentConfig, Mode, RangeStrategy, dump_config, flatten
from .detector import (
    DetectorState,
    TrainSample,
    decode,
    encode,
    init_state,
    load_checkpoint,
    save_checkpoint,
    train_epoch,
)
from .detector.train import reset_optimizer
from .metrics import GT, Det, MatchSpec, MetricRecord, closed_gap, mean_ap
from .pointops import range_normalize, range_split, range_symmetrize
from .prototype import PrototypeStore, build_reweight_map, effective_weight, similarity
from .scene_sim.benchmark import Benchmark, Split, make_benchmark
from .scene_sim.io import labels_to_jsonl
from .scene_sim.types import DeviceKind, ObjectLabel, PointFrame

log = logging.getLogger(__name__)

# parameters with no supervision during target self-training
TARGET_FROZEN = ("shape.", "motion.")


class MissingPrerequisite(RuntimeError):
    pass


# -- range strategies applied to frame pairs --------------------------------------------------------


@dataclass
class PreparedPair:
    cur: PointFrame
    prev: PointFrame
    labels: list[ObjectLabel]
    key: str


def prepare_pair(prev: PointFrame, cur: PointFrame, labels: list[ObjectLabel], strategy: RangeStrategy,
                 key: str) -> list[PreparedPair]:
    """Apply the range strategy to one frame pair. RSp may return several (fan) pairs."""
    if strategy is RangeStrategy.RN:
        cur, labels = range_normalize(cur, labels)
        prev = range_normalize(prev)
    elif strategy is RangeStrategy.RSYM and cur.device.kind is DeviceKind.SOLID_STATE:
        cur, labels = range_symmetrize(cur, labels)
        prev = range_symmetrize(prev)
    elif strategy is RangeStrategy.RSP and cur.device.kind is DeviceKind.MECHANICAL:
        fans_cur = range_split(cur, labels)
        fans_prev = range_split(prev)
        return [PreparedPair(fc, fp, fl, f"{key}#fan{k}") for k, ((fc, fl), fp) in enumerate(zip(fans_cur, fans_prev))]
    return [PreparedPair(cur, prev, labels, key)]


def source_samples(split: Split, strategy: RangeStrategy, with_labels: bool = True) -> list[TrainSample]:
    out = []
    for i in range(len(split)):
        prev, cur = split.frames(i)
        labels = split.labels(i) if with_labels else []
        for p in prepare_pair(prev, cur, labels, strategy, split.sample_key(i)):
            out.append(TrainSample(p.cur.points, p.prev.points, p.labels, True, p.key))
    return out


def target_pairs(split: Split, strategy: RangeStrategy) -> list[PreparedPair]:
    """Preprocessed frame pairs of a split, without touching its labels."""
    out = []
    for i in range(len(split)):
        prev, cur = split.frames(i)
        out.extend(prepare_pair(prev, cur, [], strategy, split.sample_key(i)))
    return out


def restore_detection_xy(xy: np.ndarray, frame: PointFrame) -> np.ndarray:
    """Map BEV centers from a preprocessed frame back to the raw sensor frame."""
    offset = np.asarray(frame.extras.get("origin_offset", np.zeros(3)))
    return xy - offset[:2]


def in_device_view(xy: np.ndarray, device) -> np.ndarray:
    """Mask of raw-frame centers inside the device's field of view (with a small angular margin)."""
    if device.kind is DeviceKind.MECHANICAL:
        return np.ones(len(xy), dtype=bool)
    az = np.degrees(np.arctan2(xy[:, 1], xy[:, 0]))
    lo, hi = device.horizontal_fov
    return (xy[:, 0] >= 0) & (az >= lo - 2.0) & (az <= hi + 2.0)


# -- stages -----------------------------------------------------------------------------------------


def _train(state: DetectorState, samples: list[TrainSample], cfg: ExperimentConfig, epochs: int, tag: str,
           weight_provider=None, aux=None, frozen=(), groups: list[list[int]] | None = None) -> DetectorState:
    """Adam passes over ``samples``.

    With ``groups``, each epoch visits one randomly drawn member per group
    instead of every sample (used to give range-split fans the step budget of
    whole frames).
    """
    reset_optimizer(state)
    for epoch in range(epochs):
        t0 = time.time()
        seed = _stage_seed(cfg.pipeline.seed, tag, epoch)
        chosen = samples
        if groups is not None:
            rng = np.random.default_rng(seed)
            chosen = [samples[g[rng.integers(len(g))]] for g in groups]
        recs = train_epoch(state, chosen, cfg.train, seed=seed, weight_provider=weight_provider, aux_loss=aux,
                           frozen=frozen)
        if recs:
            last = recs[-5:]
            log.info("%s epoch %d/%d: cls %.4f reg %.4f motion %.4f aux %.4f (%.1fs)", tag, epoch + 1, epochs,
                     np.mean([r.loss.cls for r in last]), np.mean([r.loss.reg for r in last]),
                     np.mean([r.loss.motion for r in last]), np.mean([r.aux for r in last]), time.time() - t0)
    return state


def frame_groups(samples: list[TrainSample]) -> list[list[int]]:
    """Indices of samples cut from the same frame pair (range-split fans share a key prefix)."""
    groups: dict[str, list[int]] = {}
    for n, s in enumerate(samples):
        groups.setdefault(s.key.split("#")[0], []).append(n)
    return list(groups.values())


def _stage_seed(seed: int, tag: str, epoch: int = 0) -> int:
    digest = hashlib.sha256(f"{seed}:{tag}:{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def pretrain_source(cfg: ExperimentConfig, bench: Benchmark, strategy: RangeStrategy | None = None) -> DetectorState:
    """Supervised training on the labeled source split (detector, motion head, shape perceptron)."""
    strategy = strategy or cfg.pipeline.range_strategy
    state = init_state(cfg.detector, _stage_seed(cfg.pipeline.seed, "init") % (2 ** 32))
    samples = source_samples(bench.source, strategy)
    aux = make_shape_aux(cfg.alignment, cfg.detector.shape_classes)
    groups = frame_groups(samples) if strategy is RangeStrategy.RSP and cfg.pipeline.split_equal_steps else None
    return _train(state, samples, cfg, cfg.pipeline.epochs_source, "pretrain", aux=aux, groups=groups)


def train_oracle(cfg: ExperimentConfig, bench: Benchmark, strategy: RangeStrategy | None = None) -> DetectorState:
    """Fully supervised training on the labeled target train split (the adaptation upper bound)."""
    strategy = strategy or cfg.pipeline.range_strategy
    state = init_state(cfg.detector, _stage_seed(cfg.pipeline.seed, "init") % (2 ** 32))
    samples = source_samples(bench.target_train, strategy)
    aux = make_shape_aux(cfg.alignment, cfg.detector.shape_classes)
    return _train(state, samples, cfg, cfg.pipeline.epochs_source, "oracle", aux=aux)


def generate_pseudo_labels(state: DetectorState, pairs: list[PreparedPair], score_floor: float,
                           max_detections: int = 100) -> list[list[ObjectLabel]]:
    """Decode every (preprocessed) target pair; detections become labels carrying confidence d = score.

    Peaks whose regressed center lands off the grid are dropped: they can be
    neither supervised nor reweighted.
    """
    grid = state.cfg.grid
    out = []
    for p in pairs:
        dets = decode(encode(p.cur, p.prev, state), grid, state.cfg.classes, score_floor, max_detections)
        out.append([d.to_label() for d in dets if grid.contains(d.center)])
    return out


def seed_prototypes(state: DetectorState, cfg: ExperimentConfig, samples: list[TrainSample]) -> PrototypeStore:
    """Initialize class prototypes from source ground truth (d = 1), one EMA step per batch."""
    dim = cfg.detector.shape_hidden + cfg.detector.channels + cfg.detector.motion_hidden
    store = PrototypeStore(dim, cfg.prototype.alpha)
    bs = cfg.train.batch_size
    for start in range(0, len(samples), bs):
        feats = []
        for s in samples[start:start + bs]:
            labels = [replace(lab, confidence=1.0) for lab in s.labels if lab.class_id in cfg.detector.classes]
            maps = encode(s.cur, s.prev, state)
            feats.extend(f for f in label_features(s.cur, labels, maps, state, cfg.alignment) if f is not None)
        store.update(feats)
    return store


@dataclass
class ReweightLog:
    similarities: list[float] = field(default_factory=list)
    confidences: list[float] = field(default_factory=list)


def make_reweighter(cfg: ExperimentConfig, store: PrototypeStore, record: ReweightLog | None = None):
    """Weight provider implementing the prototype soft selection for one training iteration."""
    classes = cfg.detector.classes
    floor = cfg.prototype.background_weight

    def provider(state: DetectorState, batch: list[TrainSample], maps_list) -> list[np.ndarray]:
        per_sample = [label_features(s.cur, s.labels, m, state, cfg.alignment) for s, m in zip(batch, maps_list)]
        cold = {c for c in classes if not store.get(c).initialized}
        store.update([f for feats in per_sample for f in feats if f is not None])
        weights = []
        for s, feats in zip(batch, per_sample):
            sims = []
            for lab, f in zip(s.labels, feats):
                if lab.class_id in cold:
                    sims.append(lab.confidence)
                elif f is None:
                    sims.append(0.0)
                else:
                    sims.append(similarity(f, store.get(lab.class_id)))
            if record is not None:
                record.similarities.extend(sims)
                record.confidences.extend(lab.confidence for lab in s.labels)
            # augmentation can push labels off the grid; they have no kernel to weight
            grid = state.cfg.grid
            kept = [(lab, sp) for lab, sp in zip(s.labels, sims) if grid.contains(lab.box.center[:2])]
            w = build_reweight_map([k[0] for k in kept], [k[1] for k in kept], grid, classes)
            weights.append(effective_weight(w, floor))
        return weights

    return provider


def self_train(state: DetectorState, cfg: ExperimentConfig, pairs: list[PreparedPair],
               pseudo: list[list[ObjectLabel]], mode: Mode, store: PrototypeStore | None = None,
               record: ReweightLog | None = None, tag: str = "selftrain") -> DetectorState:
    """Retrain on target pairs supervised by pseudo-labels.

    ST uses a unit weight map. CL3D reweights the classification loss with the
    prototype similarity map; with both alignment branches disabled it is ST.
    """
    samples = [TrainSample(p.cur.points, p.prev.points, labs, False, p.key) for p, labs in zip(pairs, pseudo)]
    provider = None
    if mode is Mode.CL3D and (cfg.alignment.use_sga or cfg.alignment.use_tma):
        if store is None:
            dim = cfg.detector.shape_hidden + cfg.detector.channels + cfg.detector.motion_hidden
            store = PrototypeStore(dim, cfg.prototype.alpha)
        provider = make_reweighter(cfg, store, record)
    return _train(state, samples, cfg, cfg.pipeline.epochs_target, tag, weight_provider=provider,
                  frozen=TARGET_FROZEN)


def detections_for_eval(state: DetectorState, cfg: ExperimentConfig, split: Split,
                        strategy: RangeStrategy) -> list[Det]:
    grid = state.cfg.grid
    dets = []
    for i in range(len(split)):
        prev, cur = split.frames(i)
        pairs = prepare_pair(prev, cur, [], strategy, split.sample_key(i))
        for p in pairs:
            found = decode(encode(p.cur, p.prev, state), grid, state.cfg.classes, cfg.eval.score_floor,
                           cfg.eval.max_detections)
            if not found:
                continue
            xy = restore_detection_xy(np.array([d.center for d in found]), p.cur)
            if "fan_rotation" in p.cur.extras:
                a = -p.cur.extras["fan_rotation"]
                c, s = math.cos(a), math.sin(a)
                xy = np.stack([c * xy[:, 0] - s * xy[:, 1], s * xy[:, 0] + c * xy[:, 1]], axis=1)
            keep = in_device_view(xy, split.device)
            dets.extend(Det(split.sample_key(i), float(x), float(y), d.class_id, d.score)
                        for (x, y), d, k in zip(xy, found, keep) if k)
    return dets


def evaluate(state: DetectorState, cfg: ExperimentConfig, split: Split, strategy: RangeStrategy) -> MetricRecord:
    """Center-distance mAP on ``split`` (raw sensor frame, detected classes only)."""
    dets = detections_for_eval(state, cfg, split, strategy)
    gts = [GT(split.sample_key(i), lab.box.center[0], lab.box.center[1], lab.class_id)
           for i in range(len(split)) for lab in split.labels(i) if lab.class_id in cfg.detector.classes]
    return mean_ap(dets, gts, MatchSpec(cfg.eval.thresholds))


# -- experiment driver ------------------------------------------------------------------------------


@dataclass
class RunArtifacts:
    mode: Mode
    range_strategy: RangeStrategy
    metrics: MetricRecord
    source_metrics: MetricRecord | None = None
    checkpoints: dict[str, Path] = field(default_factory=dict)
    pseudo_labels: list[list[list[ObjectLabel]]] = field(default_factory=list)
    target_label_access: bool = False
    pseudo_label_recall: float | None = None
    state: DetectorState | None = None


class StageCache:
    """In-memory reuse of benchmarks and trained states across the runs of a matrix."""

    def __init__(self):
        self.benchmarks: dict[str, Benchmark] = {}
        self.states: dict[str, DetectorState] = {}
        self.pseudo: dict[str, tuple[list[PreparedPair], list[list[ObjectLabel]]]] = {}

    def benchmark(self, cfg: ExperimentConfig) -> Benchmark:
        key = json.dumps(_bench_key(cfg), sort_keys=True)
        if key not in self.benchmarks:
            self.benchmarks.clear()
            self.states.clear()
            self.pseudo.clear()
            log.info("rendering benchmark (seed %d)", cfg.benchmark.seed)
            self.benchmarks[key] = make_benchmark(cfg.benchmark, cfg.runtime.workers)
        return self.benchmarks[key]


def _bench_key(cfg: ExperimentConfig) -> dict:
    from dataclasses import asdict
    return asdict(cfg.benchmark)


def _source_variant(strategy: RangeStrategy) -> str:
    # only range split changes what the source pretraining sees
    return "fans" if strategy is RangeStrategy.RSP else "disc"


_ARM_KEYS = ("pipeline.mode", "pipeline.range_strategy", "alignment.use_sga", "alignment.use_tma")


def _training_key(cfg: ExperimentConfig) -> str:
    """Digest of every setting that can influence supervised training (arm selectors excluded)."""
    text = "".join(f"{k}={v};" for k, v in flatten(cfg) if k not in _ARM_KEYS)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def pseudo_label_recall(pseudo: list[list[ObjectLabel]], split: Split, pairs: list[PreparedPair],
                        classes: tuple[int, ...], radius: float = 2.0) -> float:
    """Fraction of target-train objects with a pseudo-label within ``radius`` (reads withheld labels)."""
    hit = total = 0
    by_key: dict[str, list[np.ndarray]] = {}
    for p, labs in zip(pairs, pseudo):
        base = p.key.split("#")[0]
        xy = np.array([lab.box.center[:2] for lab in labs]).reshape(-1, 2)
        by_key.setdefault(base, []).append(restore_detection_xy(xy, p.cur))
    for i in range(len(split)):
        xy = np.concatenate(by_key.get(split.sample_key(i), [np.zeros((0, 2))]))
        for lab in split.labels(i):
            if lab.class_id not in classes:
                continue
            total += 1
            if len(xy) and np.min(np.hypot(*(xy - np.array(lab.box.center[:2])).T)) <= radius:
                hit += 1
    return hit / total if total else 0.0


def run_experiment(cfg: ExperimentConfig, run_dir: Path | None = None, cache: StageCache | None = None,
                   bench: Benchmark | None = None) -> RunArtifacts:
    """Execute the stages the mode needs and evaluate on the target eval split."""
    cfg.validate()
    cache = cache or StageCache()
    bench = bench or cache.benchmark(cfg)
    mode, strategy = cfg.pipeline.mode, cfg.pipeline.range_strategy
    run_dir = Path(run_dir) if run_dir else None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(run_dir / "config.resolved.cfg", dump_config(cfg))
    checkpoints: dict[str, Path] = {}
    source_metrics = None
    bench.target_train.label_access_audit = False

    if mode is Mode.ORACLE:
        key = f"oracle:{strategy.value}:{_training_key(cfg)}"
        if key not in cache.states:
            cache.states[key] = train_oracle(cfg, bench, strategy)
        state = cache.states[key].copy()
    else:
        key = f"pretrain:{_source_variant(strategy)}:{_training_key(cfg)}"
        if key not in cache.states:
            cache.states[key] = pretrain_source(cfg, bench, strategy)
        state = cache.states[key].copy()
        if mode is Mode.DT:
            source_metrics = evaluate(state, cfg, bench.source_eval, strategy)
            log.info("source self-eval mAP %.4f", source_metrics.mAP)
    if run_dir:
        stage = "oracle" if mode is Mode.ORACLE else "pretrain"
        checkpoints[stage] = save_state(run_dir, stage, state)

    all_pseudo = []
    if mode in (Mode.ST, Mode.CL3D):
        first_key = f"{key}:{strategy.value}"
        if first_key not in cache.pseudo:
            pairs = target_pairs(bench.target_train, strategy)
            cache.pseudo[first_key] = (pairs, generate_pseudo_labels(state, pairs, cfg.pipeline.score_floor,
                                                                     cfg.eval.max_detections))
        pairs, first_round = cache.pseudo[first_key]
        store = None
        if mode is Mode.CL3D and cfg.prototype.seed_on_source:
            store = seed_prototypes(state, cfg, source_samples(bench.source, strategy))
        for rnd in range(cfg.pipeline.rounds):
            if rnd == 0:
                pseudo = first_round
            else:
                pseudo = generate_pseudo_labels(state, pairs, cfg.pipeline.score_floor, cfg.eval.max_detections)
            all_pseudo.append(pseudo)
            if run_dir:
                write_pseudo(run_dir / "pseudo_labels" / f"round_{rnd}.jsonl", pairs, pseudo)
            state = self_train(state, cfg, pairs, pseudo, mode, store, tag=f"selftrain{rnd}")
            if run_dir:
                checkpoints[f"selftrain_{rnd}"] = save_state(run_dir, f"selftrain_{rnd}", state)
            if run_dir and store is not None:
                write_prototypes(run_dir / "checkpoints" / f"prototypes_{rnd}.json", store)

    audit = bench.target_train.label_access_audit
    metrics = evaluate(state, cfg, bench.target_eval, strategy)
    log.info("%s/%s seed %d: mAP %.4f", mode.value, strategy.value, cfg.pipeline.seed, metrics.mAP)
    art = RunArtifacts(mode, strategy, metrics, source_metrics, checkpoints, all_pseudo, audit, state=state)
    if run_dir:
        write_metrics(run_dir, [metrics_row(cfg, metrics)], art)
    return art


def save_state(run_dir: Path, name: str, state: DetectorState) -> Path:
    path = run_dir / "checkpoints" / f"{name}.clds"
    save_checkpoint(path, state)
    return path


def write_pseudo(path: Path, pairs: list[PreparedPair], pseudo: list[list[ObjectLabel]]) -> None:
    lines = []
    for p, labs in zip(pairs, pseudo):
        for line in labels_to_jsonl(labs).splitlines():
            rec = json.loads(line)
            rec["sample"] = p.key
            lines.append(json.dumps(rec, sort_keys=True))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_pseudo(path: Path, pairs: list[PreparedPair]) -> list[list[ObjectLabel]]:
    """Inverse of the pseudo-label writer, ordered like ``pairs``."""
    by_key: dict[str, list[ObjectLabel]] = {p.key: [] for p in pairs}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        key = rec.pop("sample")
        if key not in by_key:
            raise ValueError(f"pseudo-label file {path} names unknown sample {key!r}")
        by_key[key].append(ObjectLabel.from_json(rec))
    return [by_key[p.key] for p in pairs]


def write_prototypes(path: Path, store: PrototypeStore) -> None:
    payload = {k: [float(x) for x in v] for k, v in store.to_arrays().items()}
    atomic_write_text(path, json.dumps(payload, sort_keys=True))


def arm_name(mode: Mode, strategy: RangeStrategy, use_sga: bool = True, use_tma: bool = True) -> str:
    name = mode.value
    if mode is Mode.CL3D and not (use_sga and use_tma):
        name += " w/o " + " & ".join(n for n, on in (("TMA", use_tma), ("SGA", use_sga)) if not on)
    if strategy is not RangeStrategy.NONE:
        name += f"+{strategy.value}"
    return name


def metrics_row(cfg: ExperimentConfig, m: MetricRecord) -> dict:
    a = cfg.alignment
    return {
        "method": arm_name(cfg.pipeline.mode, cfg.pipeline.range_strategy, a.use_sga, a.use_tma),
        "seed": cfg.pipeline.seed,
        "mAP": round(m.mAP, 6),
        "closed_gap": None if m.closed_gap is None else round(m.closed_gap, 4),
        **{f"AP@{t:g}": (None if v is None else round(v, 6)) for t, v in m.per_threshold.items()},
    }


def write_metrics(run_dir: Path, rows: list[dict], art: RunArtifacts | None = None, stem: str = "metrics") -> None:
    payload = {"rows": rows}
    if art is not None:
        payload["detail"] = art.metrics.to_json()
        payload["target_label_access"] = art.target_label_access
        if art.source_metrics is not None:
            payload["source_eval"] = art.source_metrics.to_json()
    atomic_write_text(Path(run_dir) / f"{stem}.json", json.dumps(payload, indent=1, sort_keys=True))
    buf = io.StringIO()
    fields = list(rows[0].keys()) if rows else ["method", "mAP", "closed_gap"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("n/a" if v is None and k == "closed_gap" else v) for k, v in row.items()})
    atomic_write_text(Path(run_dir) / f"{stem}.csv", buf.getvalue())


# -- the comparison matrix ------------------------------------------------------------------------


MATRIX_ARMS = (
    # (mode, range strategy, use_sga, use_tma)
    (Mode.DT, RangeStrategy.RN, True, True),
    (Mode.ST, RangeStrategy.RN, True, True),
    (Mode.CL3D, RangeStrategy.RN, True, True),
    (Mode.CL3D, RangeStrategy.RN, False, True),
    (Mode.CL3D, RangeStrategy.RN, True, False),
    (Mode.ORACLE, RangeStrategy.RN, True, True),
    (Mode.ST, RangeStrategy.NONE, True, True),
    (Mode.ST, RangeStrategy.RSYM, True, True),
    (Mode.ST, RangeStrategy.RSP, True, True),
)


def arm_config(base: ExperimentConfig, seed: int, mode: Mode, strategy: RangeStrategy, use_sga: bool,
               use_tma: bool) -> ExperimentConfig:
    from copy import deepcopy
    cfg = deepcopy(base)
    cfg.pipeline.seed = seed
    cfg.benchmark.seed = seed
    cfg.pipeline.mode = mode
    cfg.pipeline.range_strategy = strategy
    cfg.alignment.use_sga = use_sga
    cfg.alignment.use_tma = use_tma
    return cfg


def run_matrix(base: ExperimentConfig, seeds: list[int], run_dir: Path | None = None,
               arms=MATRIX_ARMS) -> list[dict]:
    """Every arm for every seed; closed gap against the same seed's DT+RN and Oracle+RN."""
    rows = []
    cache = StageCache()
    for seed in seeds:
        seed_rows = []
        for mode, strategy, sga, tma in arms:
            cfg = arm_config(base, seed, mode, strategy, sga, tma)
            sub = Path(run_dir) / f"seed_{seed}" / arm_name(mode, strategy, sga, tma).replace(" ", "_").replace(
                "/", "").replace("&", "and") if run_dir else None
            art = run_experiment(cfg, sub, cache)
            if mode is not Mode.ORACLE and art.target_label_access:
                raise RuntimeError(f"{arm_name(mode, strategy, sga, tma)} read target-train labels")
            seed_rows.append(metrics_row(cfg, art.metrics))
        dt = next((r["mAP"] for r in seed_rows if r["method"] == "DT+RN"), None)
        oracle = next((r["mAP"] for r in seed_rows if r["method"] == "Oracle+RN"), None)
        for r in seed_rows:
            if dt is not None and oracle is not None and r["method"] not in ("DT+RN", "Oracle+RN"):
                gap = closed_gap(r["mAP"], dt, oracle)
                r["closed_gap"] = None if gap is None else round(gap, 4)
        rows.extend(seed_rows)
        if run_dir:
            write_metrics(run_dir, rows, stem="matrix")
    if run_dir:
        write_metrics(run_dir, summarize(rows), stem="summary")
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Median mAP and closed gap per method across seeds."""
    out = []
    for method in dict.fromkeys(r["method"] for r in rows):
        sel = [r for r in rows if r["method"] == method]
        gaps = [r["closed_gap"] for r in sel if r["closed_gap"] is not None]
        out.append({
            "method": method,
            "mAP": round(statistics.median(r["mAP"] for r in sel), 6),
            "closed_gap": round(statistics.median(gaps), 4) if gaps else None,
            "seeds": len(sel),
        })
    return out


def load_state(run_dir: Path, name: str) -> DetectorState:
    path = Path(run_dir) / "checkpoints" / f"{name}.clds"
    if not path.exists():
        raise MissingPrerequisite(f"checkpoint {path} not found; run the stage that produces it first")
    return load_checkpoint(path)

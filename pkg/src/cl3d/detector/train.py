"""Augmentation, adaptive-moment updates and the epoch loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..scene_sim.types import Box3D, ObjectLabel, wrap_angle
from .loss import LossConfig, LossParts, build_targets, detection_loss
from .model import DetectorState, FeatureMaps, backward, forward, prepare_input

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class AugmentConfig:
    enabled: bool = True
    flip: bool = True
    max_rotation: float = math.pi / 8
    scale_min: float = 0.95
    scale_max: float = 1.05


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class TrainSample:
    cur: np.ndarray  # (N, 3)
    prev: np.ndarray  # (M, 3)
    labels: list[ObjectLabel]
    has_velocity: bool
    key: str = ""


def _transform_label(lab: ObjectLabel, flip: bool, theta: float, scale: float) -> ObjectLabel:
    x, y, z = lab.box.center
    vx, vy = lab.velocity
    yaw = lab.box.yaw
    if flip:
        y, vy, yaw = -y, -vy, -yaw
    c, s = math.cos(theta), math.sin(theta)
    x, y = c * x - s * y, s * x + c * y
    vx, vy = c * vx - s * vy, s * vx + c * vy
    box = Box3D((scale * x, scale * y, scale * z), tuple(scale * v for v in lab.box.size),
                float(wrap_angle(yaw + theta)))
    return replace(lab, box=box, velocity=(scale * vx, scale * vy))


def transform_points(points: np.ndarray, flip: bool, theta: float, scale: float) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).copy()
    if flip:
        pts[:, 1] = -pts[:, 1]
    c, s = math.cos(theta), math.sin(theta)
    x, y = pts[:, 0].copy(), pts[:, 1].copy()
    pts[:, 0] = c * x - s * y
    pts[:, 1] = s * x + c * y
    return pts * scale


def apply_transform(sample: TrainSample, flip: bool, theta: float, scale: float) -> TrainSample:
    return TrainSample(
        transform_points(sample.cur, flip, theta, scale),
        transform_points(sample.prev, flip, theta, scale),
        [_transform_label(lab, flip, theta, scale) for lab in sample.labels],
        sample.has_velocity,
        sample.key,
    )


def augment(sample: TrainSample, rng: np.random.Generator, cfg: AugmentConfig) -> TrainSample:
    """Shared random flip / rotation / scale of both frames, the labels and their velocities."""
    flip = bool(rng.random() < 0.5)
    theta = rng.uniform(-cfg.max_rotation, cfg.max_rotation)
    scale = rng.uniform(cfg.scale_min, cfg.scale_max)
    if not cfg.enabled:
        return sample
    return apply_transform(sample, flip and cfg.flip, theta, scale)


def reset_optimizer(state: DetectorState) -> None:
    state.adam_m = {k: np.zeros_like(v) for k, v in state.params.items()}
    state.adam_v = {k: np.zeros_like(v) for k, v in state.params.items()}
    state.step = 0


def adam_step(state: DetectorState, grads: dict[str, np.ndarray], cfg: TrainConfig,
              frozen: Sequence[str] = ()) -> None:
    if not state.adam_m:
        reset_optimizer(state)
    state.step += 1
    t = state.step
    bc1 = 1 - cfg.beta1 ** t
    bc2 = 1 - cfg.beta2 ** t
    for name, g in grads.items():
        if any(name.startswith(prefix) for prefix in frozen):
            continue
        p = state.params[name]
        g = g.astype(p.dtype, copy=False)
        m, v = state.adam_m[name], state.adam_v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        p -= (cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)).astype(p.dtype)


# weight_provider(state, samples, maps) -> per-sample weight maps (or None entries)
WeightProvider = Callable[[DetectorState, list[TrainSample], list[FeatureMaps]], list]
# aux_loss(state, samples) -> (loss value, grads)
AuxLoss = Callable[[DetectorState, list[TrainSample]], tuple[float, dict[str, np.ndarray]]]


@dataclass
class StepRecord:
    loss: LossParts
    aux: float = 0.0


def train_step(state: DetectorState, batch: list[TrainSample], cfg: TrainConfig,
               weight_provider: WeightProvider | None = None, aux_loss: AuxLoss | None = None,
               frozen: Sequence[str] = ()) -> StepRecord:
    grid = state.cfg.grid
    dtype = state.params["enc.w1"].dtype
    grads = {k: np.zeros(v.shape, dtype=np.float64) for k, v in state.params.items()}
    outs = []
    for s in batch:
        maps, cache = forward(state, prepare_input(s.cur, s.prev, grid, dtype))
        outs.append((maps, cache))
    weights = weight_provider(state, batch, [m for m, _ in outs]) if weight_provider else [None] * len(batch)
    total = LossParts(0.0, 0.0, 0.0)
    for s, (maps, cache), w in zip(batch, outs, weights):
        targets = build_targets(s.labels, grid, state.cfg.classes, s.has_velocity)
        parts, dh, db, dv = detection_loss(maps, targets, cfg.loss, w)
        if not math.isfinite(parts.total):
            raise TrainingDiverged(f"non-finite loss {parts} on sample {s.key!r} at step {state.step}")
        for k, g in backward(state, cache, dh, db, dv).items():
            grads[k] += g
        total = LossParts(total.cls + parts.cls, total.reg + parts.reg, total.motion + parts.motion)
    del outs
    aux_value = 0.0
    if aux_loss is not None:
        aux_value, aux_grads = aux_loss(state, batch)
        if not math.isfinite(aux_value):
            raise TrainingDiverged(f"non-finite auxiliary loss at step {state.step}")
        for k, g in aux_grads.items():
            grads[k] += g * len(batch)
    n = len(batch)
    for k in grads:
        grads[k] /= n
    adam_step(state, grads, cfg, frozen)
    return StepRecord(LossParts(total.cls / n, total.reg / n, total.motion / n), aux_value)


def train_epoch(state: DetectorState, samples: Sequence[TrainSample], cfg: TrainConfig, seed: int,
                weight_provider: WeightProvider | None = None, aux_loss: AuxLoss | None = None,
                frozen: Sequence[str] = ()) -> list[StepRecord]:
    """One shuffled pass over ``samples``; deterministic for a fixed ``seed``."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    records = []
    for start in range(0, len(order), cfg.batch_size):
        batch = [augment(samples[i], rng, cfg.augment) for i in order[start:start + cfg.batch_size]]
        records.append(train_step(state, batch, cfg, weight_provider, aux_loss, frozen))
        if len(records) % 10 == 0:
            r = records[-1]
            log.debug("step %d cls %.4f reg %.4f motion %.4f aux %.4f", state.step, r.loss.cls, r.loss.reg,
                      r.loss.motion, r.aux)
    return records

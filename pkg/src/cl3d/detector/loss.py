"""Detection losses with closed-form gradients w.r.t. the head outputs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..scene_sim.types import ObjectLabel
from .grid import BevGrid, label_cell, render_target_heatmap
from .model import BOX_DIMS, FeatureMaps


@dataclass
class LossConfig:
    focal_alpha: float = 2.0  # focusing exponent
    focal_beta: float = 4.0  # negative down-weighting exponent on (1 - Y)
    reg_weight: float = 1.0
    motion_weight: float = 0.2
    smooth_l1_beta: float = 1.0 / 9.0


@dataclass
class Targets:
    heat: np.ndarray  # (res, res, C)
    cells: np.ndarray  # (L, 2) center cells of in-grid labels of detected classes
    box: np.ndarray  # (L, 6)
    vel: np.ndarray  # (L, 2)
    has_velocity: bool


def box_target(label: ObjectLabel, cell: tuple[int, int], grid: BevGrid) -> np.ndarray:
    cx, cy = grid.cell_center(*cell)
    l, w = label.box.size[0], label.box.size[1]
    yaw = label.box.yaw
    return np.array([label.box.center[0] - cx, label.box.center[1] - cy, math.log(w), math.log(l),
                     math.sin(yaw), math.cos(yaw)])


def build_targets(labels: list[ObjectLabel], grid: BevGrid, classes: tuple[int, ...],
                  has_velocity: bool) -> Targets:
    cells, boxes, vels = [], [], []
    for lab in labels:
        if lab.class_id not in classes:
            continue
        cell = label_cell(lab, grid)
        if cell is None:
            continue
        cells.append(cell)
        boxes.append(box_target(lab, cell, grid))
        vels.append(lab.velocity)
    return Targets(
        heat=render_target_heatmap(labels, grid, classes),
        cells=np.array(cells, dtype=np.int64).reshape(-1, 2),
        box=np.array(boxes).reshape(-1, BOX_DIMS),
        vel=np.array(vels, dtype=np.float64).reshape(-1, 2),
        has_velocity=has_velocity,
    )


def _softplus(x):
    return np.logaddexp(0.0, x)


def focal_loss(logits: np.ndarray, target: np.ndarray, weight: np.ndarray | None = None,
               alpha: float = 2.0, beta: float = 4.0) -> tuple[float, np.ndarray]:
    """Penalty-reduced pixel-wise focal loss on sigmoid(logits); returns (loss, d loss / d logits).

    Pixels with ``target == 1`` are positives. Every pixel's term is multiplied
    by ``weight`` and the sum is normalized by the positive count (at least 1).
    """
    z = logits.astype(np.float64)
    p = 1.0 / (1.0 + np.exp(-z))
    log_p = -_softplus(-z)
    log_1mp = -_softplus(z)
    pos = target == 1.0
    neg_w = (1.0 - target) ** beta
    pos_loss = -((1 - p) ** alpha) * log_p
    neg_loss = -neg_w * p ** alpha * log_1mp
    # derivatives of each term w.r.t. the logit
    d_pos = (1 - p) ** alpha * (alpha * p * log_p - (1 - p))
    d_neg = neg_w * p ** alpha * (p - alpha * (1 - p) * log_1mp)
    per_pixel = np.where(pos, pos_loss, neg_loss)
    grad = np.where(pos, d_pos, d_neg)
    if weight is not None:
        per_pixel = per_pixel * weight
        grad = grad * weight
    norm = max(1.0, float(pos.sum()))
    return float(per_pixel.sum() / norm), grad / norm


def smooth_l1(diff: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.abs(diff)
    quad = a < beta
    val = np.where(quad, 0.5 * diff ** 2 / beta, a - 0.5 * beta)
    grad = np.where(quad, diff / beta, np.sign(diff))
    return val, grad


@dataclass
class LossParts:
    cls: float
    reg: float
    motion: float

    @property
    def total(self) -> float:
        return self.cls + self.reg + self.motion


def detection_loss(maps: FeatureMaps, targets: Targets, cfg: LossConfig, weight: np.ndarray | None = None,
                   terms: tuple[str, ...] = ("cls", "reg", "motion")):
    """``weight * L_cls + L_reg (+ L_motion)`` and its gradients w.r.t. heat/box/vel maps.

    ``weight`` multiplies the classification term only; it must match the
    heatmap's shape. Returns ``(LossParts, d_heat, d_box, d_vel)``.
    """
    if weight is not None and weight.shape != maps.heat.shape:
        raise ValueError(f"weight map shape {weight.shape} does not match heatmap shape {maps.heat.shape}")
    d_heat = np.zeros(maps.heat.shape)
    d_box = np.zeros(maps.box.shape)
    d_vel = np.zeros(maps.vel.shape)
    cls = reg = motion = 0.0
    if "cls" in terms:
        cls, d_heat = focal_loss(maps.heat, targets.heat, weight, cfg.focal_alpha, cfg.focal_beta)
    n = len(targets.cells)
    if n:
        ci, cj = targets.cells[:, 0], targets.cells[:, 1]
        if "reg" in terms:
            val, g = smooth_l1(maps.box[ci, cj].astype(np.float64) - targets.box, cfg.smooth_l1_beta)
            reg = cfg.reg_weight * float(val.sum()) / n
            np.add.at(d_box, (ci, cj), cfg.reg_weight * g / n)
        if "motion" in terms and targets.has_velocity:
            val, g = smooth_l1(maps.vel[ci, cj].astype(np.float64) - targets.vel, cfg.smooth_l1_beta)
            motion = cfg.motion_weight * float(val.sum()) / n
            np.add.at(d_vel, (ci, cj), cfg.motion_weight * g / n)
    return LossParts(cls, reg, motion), d_heat, d_box, d_vel

"""Center-distance AP / mAP and closed gap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class MatchSpec:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        t = self.thresholds
        if not t or any(x <= 0 for x in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError(f"thresholds must be positive and strictly increasing, got {t}")


@dataclass(frozen=True)
class Det:
    """Minimal detection view for matching: frame key, BEV center, class, score."""

    frame: str
    x: float
    y: float
    class_id: int
    score: float


@dataclass(frozen=True)
class GT:
    frame: str
    x: float
    y: float
    class_id: int


@dataclass
class APResult:
    ap: float | None
    tp: int
    fp: int
    fn: int


def match(dets: Sequence[Det], gts: Sequence[GT], threshold: float) -> np.ndarray:
    """Greedy one-to-one matching in descending score order; returns a TP flag per sorted detection."""
    by_frame: dict[tuple[str, int], list[int]] = {}
    for n, g in enumerate(gts):
        by_frame.setdefault((g.frame, g.class_id), []).append(n)
    taken = np.zeros(len(gts), dtype=bool)
    order = sorted(range(len(dets)), key=lambda n: -dets[n].score)
    tp = np.zeros(len(dets), dtype=bool)
    for rank, n in enumerate(order):
        d = dets[n]
        best, best_dist = -1, math.inf
        for g in by_frame.get((d.frame, d.class_id), ()):
            if taken[g]:
                continue
            dist = math.hypot(d.x - gts[g].x, d.y - gts[g].y)
            if dist <= threshold and dist < best_dist:
                best, best_dist = g, dist
        if best >= 0:
            assert not taken[best]
            taken[best] = True
            tp[rank] = True
    return tp


def ap_from_flags(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated area under the precision-recall curve."""
    if n_gt == 0:
        return 0.0
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * envelope))


def average_precision(dets: Sequence[Det], gts: Sequence[GT], threshold: float, class_id: int | None = None) -> APResult:
    """AP for one class at one center-distance threshold.

    ``None`` AP means there was neither ground truth nor a detection.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    if class_id is not None:
        dets = [d for d in dets if d.class_id == class_id]
        gts = [g for g in gts if g.class_id == class_id]
    if not dets and not gts:
        return APResult(None, 0, 0, 0)
    tp = match(dets, gts, threshold)
    n_tp = int(tp.sum())
    return APResult(ap_from_flags(tp, len(gts)), n_tp, len(dets) - n_tp, len(gts) - n_tp)


@dataclass
class MetricRecord:
    per_threshold: dict[float, float | None]
    mAP: float
    counts: dict[float, dict[str, int]] = field(default_factory=dict)
    closed_gap: float | None = None

    def to_json(self) -> dict:
        return {
            "mAP": self.mAP,
            "per_threshold": {f"{k:g}": v for k, v in self.per_threshold.items()},
            "counts": {f"{k:g}": v for k, v in self.counts.items()},
            "closed_gap": self.closed_gap,
        }


def mean_ap(dets: Sequence[Det], gts: Sequence[GT], spec: MatchSpec = MatchSpec(), class_id: int | None = None) -> MetricRecord:
    per, counts = {}, {}
    for t in spec.thresholds:
        r = average_precision(dets, gts, t, class_id)
        per[t] = r.ap
        counts[t] = {"tp": r.tp, "fp": r.fp, "fn": r.fn}
    defined = [v for v in per.values() if v is not None]
    return MetricRecord(per, float(np.mean(defined)) if defined else 0.0, counts)


def closed_gap(ap_model: float, ap_dt: float, ap_oracle: float) -> float | None:
    """Percentage of the DT-to-Oracle gap recovered; ``None`` when the gap is zero."""
    if ap_oracle == ap_dt:
        return None
    return 100.0 * (ap_model - ap_dt) / (ap_oracle - ap_dt)


def format_closed_gap(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.2f}%"

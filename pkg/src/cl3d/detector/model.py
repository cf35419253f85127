"""Lite BEV center detector: point encoder, one 3x3 conv backbone, 1x1 heads.

Forward and backward passes are written out by hand; ``backward`` returns the
exact gradient of a scalar loss given the loss's gradients w.r.t. the head
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .grid import BevGrid

POINT_FEATURES = 7
BOX_DIMS = 6  # dx, dy, log w, log l, sin yaw, cos yaw


@dataclass
class DetectorConfig:
    resolution: int = 128
    extent: float = 50.0
    hidden: int = 32
    channels: int = 32
    motion_hidden: int = 32
    shape_hidden: int = 32
    classes: tuple[int, ...] = (0,)
    shape_classes: int = 2
    head_prior: float = 0.1
    dtype: str = "float32"

    @property
    def grid(self) -> BevGrid:
        return BevGrid(self.extent, self.resolution)


def param_shapes(cfg: DetectorConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes, in the declared (checkpoint) order."""
    h, c, m, s = cfg.hidden, cfg.channels, cfg.motion_hidden, cfg.shape_hidden
    return {
        "enc.w1": (POINT_FEATURES, h), "enc.b1": (h,),
        "enc.w2": (h, c), "enc.b2": (c,),
        "conv.w": (3, 3, c, c), "conv.b": (c,),
        "heat.w": (c, len(cfg.classes)), "heat.b": (len(cfg.classes),),
        "box.w": (c, BOX_DIMS), "box.b": (BOX_DIMS,),
        "motion.w1": (c, m), "motion.b1": (m,),
        "motion.w2": (m, 2), "motion.b2": (2,),
        "shape.w1": (3, s), "shape.b1": (s,),
        "shape.w2": (s, s), "shape.b2": (s,),
        "shape.cls.w": (s, cfg.shape_classes), "shape.cls.b": (cfg.shape_classes,),
    }


@dataclass
class DetectorState:
    cfg: DetectorConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def copy(self) -> "DetectorState":
        return DetectorState(
            self.cfg,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.adam_m.items()},
            {k: v.copy() for k, v in self.adam_v.items()},
            self.step,
        )

    def astype(self, dtype) -> "DetectorState":
        out = self.copy()
        out.params = {k: v.astype(dtype) for k, v in out.params.items()}
        return out


def init_state(cfg: DetectorConfig, seed: int) -> DetectorState:
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b") or name.endswith("b1") or name.endswith("b2"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[:-1]))
        params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    params["heat.b"][:] = -np.log((1 - cfg.head_prior) / cfg.head_prior)
    # small head init keeps the initial regression/velocity output near zero
    for name in ("heat.w", "box.w", "motion.w2"):
        params[name] *= 0.1
    return DetectorState(cfg, params)


@dataclass
class EncodedInput:
    """Per-point encoder input, sorted by cell, and its pooling bookkeeping for one frame pair."""

    feats: np.ndarray  # (N, 7), rows grouped by cell
    cells: np.ndarray  # (n_occ,) sorted flat index of each occupied cell
    counts: np.ndarray  # (n_occ,) points per occupied cell
    pool: sparse.csr_matrix  # (n_occ, N) mean-pooling operator
    delta_occ: np.ndarray  # (res*res,) signed occupancy difference cur - prev


def prepare_input(cur: np.ndarray, prev: np.ndarray, grid: BevGrid, dtype="float64") -> EncodedInput:
    """Build ``[x - cx, y - cy, z, |r| / extent, d_occ, 1, t_flag]`` for every in-extent point of both frames."""
    res = grid.resolution
    parts = []
    occ = []
    for pts, flag in ((cur, 1.0), (prev, 0.0)):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        ij, inside = grid.cell_of(pts[:, :2])
        pts, ij = pts[inside], ij[inside]
        flat = ij[:, 0] * res + ij[:, 1]
        o = np.zeros(res * res)
        o[flat] = 1.0
        occ.append(o)
        parts.append((pts, ij, flat, flag))
    delta = occ[0] - occ[1]
    feats, flats = [], []
    for pts, ij, flat, flag in parts:
        cx, cy = grid.cell_center(ij[:, 0], ij[:, 1])
        f = np.empty((len(pts), POINT_FEATURES))
        f[:, 0] = pts[:, 0] - cx
        f[:, 1] = pts[:, 1] - cy
        f[:, 2] = pts[:, 2]
        f[:, 3] = np.hypot(pts[:, 0], pts[:, 1]) / grid.extent
        f[:, 4] = delta[flat]
        f[:, 5] = 1.0
        f[:, 6] = flag
        feats.append(f)
        flats.append(flat)
    flat = np.concatenate(flats)
    order = np.argsort(flat, kind="stable")
    feats = np.concatenate(feats)[order].astype(dtype)
    cells, counts = np.unique(flat, return_counts=True)
    rows = np.repeat(np.arange(len(cells)), counts)
    n = len(flat)
    pool = sparse.csr_matrix(((1.0 / counts[rows]).astype(dtype), (rows, np.arange(n))), shape=(len(cells), n))
    return EncodedInput(feats, cells, counts, pool, delta)


@dataclass
class FeatureMaps:
    F: np.ndarray  # backbone features (res, res, C)
    M: np.ndarray  # motion-head hidden features (res, res, Mh)
    heat: np.ndarray  # heatmap logits (res, res, n_classes)
    box: np.ndarray  # (res, res, 6)
    vel: np.ndarray  # (res, res, 2)


def _conv_taps(cells: np.ndarray, res: int) -> list[tuple[int, int, np.ndarray, np.ndarray]]:
    """For each 3x3 tap: which occupied inputs feed an in-grid output, and that output's flat index.

    Output (i, j) reads input (i + di - 1, j + dj - 1) through tap (di, dj).
    """
    ci, cj = np.divmod(cells, res)
    taps = []
    for di in range(3):
        for dj in range(3):
            oi, oj = ci - di + 1, cj - dj + 1
            keep = (oi >= 0) & (oi < res) & (oj >= 0) & (oj < res)
            taps.append((di, dj, np.flatnonzero(keep), oi[keep] * res + oj[keep]))
    return taps


def forward(state: DetectorState, inp: EncodedInput, with_cache: bool = True):
    """Run the detector; returns ``(FeatureMaps, cache)``.

    The convolution only visits occupied input cells; empty cells carry zero
    features, so this equals the dense zero-padded 3x3 convolution.
    """
    p = state.params
    cfg = state.cfg
    res = cfg.resolution
    c = cfg.channels
    dtype = p["enc.w1"].dtype
    x = inp.feats.astype(dtype, copy=False)

    h1 = x @ p["enc.w1"]
    h1 += p["enc.b1"]
    np.maximum(h1, 0, out=h1)
    h2 = h1 @ p["enc.w2"]
    h2 += p["enc.b2"]
    np.maximum(h2, 0, out=h2)
    pooled = np.asarray(inp.pool @ h2, dtype=dtype) if len(x) else np.zeros((0, c), dtype=dtype)

    taps = _conv_taps(inp.cells, res)
    zc = np.empty((res * res, c), dtype=dtype)
    zc[:] = p["conv.b"]
    for di, dj, src, dst in taps:
        # dst is unique within one tap, so buffered += is a correct scatter-add
        zc[dst] += pooled[src] @ p["conv.w"][di, dj]
    F = np.maximum(zc, 0)

    heat = F @ p["heat.w"] + p["heat.b"]
    box = F @ p["box.w"] + p["box.b"]
    M = F @ p["motion.w1"]
    M += p["motion.b1"]
    np.maximum(M, 0, out=M)
    vel = M @ p["motion.w2"] + p["motion.b2"]

    maps = FeatureMaps(
        F.reshape(res, res, -1), M.reshape(res, res, -1), heat.reshape(res, res, -1),
        box.reshape(res, res, -1), vel.reshape(res, res, -1),
    )
    cache = dict(x=x, h1=h1, h2=h2, pooled=pooled, taps=taps, F=F, M=M, inp=inp) if with_cache else None
    return maps, cache


def backward(state: DetectorState, cache: dict, d_heat: np.ndarray, d_box: np.ndarray,
             d_vel: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given the loss gradients w.r.t. the three head outputs (each (res, res, k))."""
    p = state.params
    cfg = state.cfg
    res = cfg.resolution
    dtype = p["enc.w1"].dtype
    n = res * res
    d_heat = d_heat.reshape(n, -1).astype(dtype, copy=False)
    d_box = d_box.reshape(n, -1).astype(dtype, copy=False)
    d_vel = d_vel.reshape(n, -1).astype(dtype, copy=False)
    F, M = cache["F"], cache["M"]
    g = {}

    g["heat.w"] = F.T @ d_heat
    g["heat.b"] = d_heat.sum(0)
    dF = d_heat @ p["heat.w"].T

    g["box.w"] = F.T @ d_box
    g["box.b"] = d_box.sum(0)
    dF += d_box @ p["box.w"].T

    if d_vel.any():
        g["motion.w2"] = M.T @ d_vel
        g["motion.b2"] = d_vel.sum(0)
        dzm = (d_vel @ p["motion.w2"].T) * (M > 0)
        g["motion.w1"] = F.T @ dzm
        g["motion.b1"] = dzm.sum(0)
        dF += dzm @ p["motion.w1"].T
    else:
        # no velocity supervision: the motion branch contributes nothing
        for name in ("motion.w2", "motion.b2", "motion.w1", "motion.b1"):
            g[name] = np.zeros_like(p[name])

    dzc = dF * (F > 0)
    g["conv.b"] = dzc.sum(0)
    pooled = cache["pooled"]
    dw = np.zeros_like(p["conv.w"])
    dpooled = np.zeros_like(pooled)
    for di, dj, src, dst in cache["taps"]:
        dz = dzc[dst]
        dw[di, dj] = pooled[src].T @ dz
        dpooled[src] += dz @ p["conv.w"][di, dj].T
    g["conv.w"] = dw

    inp = cache["inp"]
    dz2 = np.asarray(inp.pool.T @ dpooled, dtype=dtype) if len(pooled) else np.zeros_like(cache["h2"])
    dz2 *= cache["h2"] > 0
    g["enc.w2"] = cache["h1"].T @ dz2
    g["enc.b2"] = dz2.sum(0)
    dz1 = dz2 @ p["enc.w2"].T
    dz1 *= cache["h1"] > 0
    g["enc.w1"] = cache["x"].T @ dz1
    g["enc.b1"] = dz1.sum(0)
    return g

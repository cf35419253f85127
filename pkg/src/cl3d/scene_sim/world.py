"""Procedural object dynamics for paired synthetic worlds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import SimObject, WorldState, wrap_angle

CAR = 0
BARRIER = 1
CLASS_NAMES = {CAR: "car", BARRIER: "barrier"}

# (length, width, height), ground clearance
CLASS_GEOMETRY = {
    CAR: ((4.5, 1.9, 1.6), 0.25),
    BARRIER: ((2.6, 0.7, 1.1), 0.15),
}


@dataclass
class SimConfig:
    """Knobs of the world generator. Every field is a documented key of the flat sim config file."""

    num_cars: int = 12
    num_barriers: int = 6
    frames: int = 2
    frame_period: float = 0.1
    car_speed_min: float = 2.0
    car_speed_max: float = 15.0
    parked_fraction: float = 0.3
    yaw_drift_sigma: float = 0.02
    size_jitter: float = 0.15
    min_separation: float = 6.0
    ground_z: float = -1.7
    spawn_min_range: float = 5.0
    spawn_max_range: float = 48.0
    spawn_fov_min: float = -180.0
    spawn_fov_max: float = 180.0

    def validate(self) -> None:
        if self.frames < 2:
            raise ValueError(f"frames must be >= 2, got {self.frames}")
        if self.frame_period <= 0:
            raise ValueError("frame_period must be positive")
        if self.car_speed_min < 0 or self.car_speed_max < self.car_speed_min:
            raise ValueError("car speeds must satisfy 0 <= car_speed_min <= car_speed_max")
        if self.num_cars < 0 or self.num_barriers < 0:
            raise ValueError("object counts must be non-negative")
        if not 0.0 <= self.parked_fraction <= 1.0:
            raise ValueError("parked_fraction must lie in [0, 1]")
        if not 0.0 <= self.size_jitter < 1.0:
            raise ValueError("size_jitter must lie in [0, 1)")
        if not 0 < self.spawn_min_range < self.spawn_max_range:
            raise ValueError("spawn ranges must satisfy 0 < min < max")


def _spawn_xy(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    # uniform over the annular sector
    r2 = rng.uniform(cfg.spawn_min_range ** 2, cfg.spawn_max_range ** 2)
    az = math.radians(rng.uniform(cfg.spawn_fov_min, cfg.spawn_fov_max))
    r = math.sqrt(r2)
    return np.array([r * math.cos(az), r * math.sin(az)])


def _initial_objects(cfg: SimConfig, rng: np.random.Generator) -> list[SimObject]:
    classes = [CAR] * cfg.num_cars + [BARRIER] * cfg.num_barriers
    placed: list[SimObject] = []
    for class_id in classes:
        base, clearance = CLASS_GEOMETRY[class_id]
        size = np.array(base) * rng.uniform(1 - cfg.size_jitter, 1 + cfg.size_jitter, size=3)
        yaw = float(wrap_angle(rng.uniform(-math.pi, math.pi)))
        if class_id == CAR and rng.random() >= cfg.parked_fraction:
            speed = rng.uniform(cfg.car_speed_min, cfg.car_speed_max)
        else:
            speed = 0.0
        velocity = speed * np.array([math.cos(yaw), math.sin(yaw)])
        for _ in range(100):
            xy = _spawn_xy(cfg, rng)
            if all(np.hypot(*(xy - o.center[:2])) >= cfg.min_separation for o in placed):
                break
        else:
            continue  # crowded sector, drop the object
        z = cfg.ground_z + clearance + size[2] / 2
        placed.append(SimObject(len(placed), class_id, np.array([xy[0], xy[1], z]), size, yaw, velocity))
    return placed


def make_world(cfg: SimConfig, seed: int) -> list[WorldState]:
    """Generate ``cfg.frames`` consecutive states of one sequence.

    Objects move with constant velocity; moving cars additionally get a small
    random yaw drift. The same ``(cfg, seed)`` always yields identical states.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    objects = _initial_objects(cfg, rng)
    drift = np.array([
        rng.normal(0.0, cfg.yaw_drift_sigma) if np.any(o.velocity) else 0.0 for o in objects
    ])
    states = []
    for k in range(cfg.frames):
        t = k * cfg.frame_period
        frame_objects = [
            SimObject(
                o.object_id,
                o.class_id,
                o.center + np.array([o.velocity[0] * t, o.velocity[1] * t, 0.0]),
                o.size.copy(),
                float(wrap_angle(o.yaw + drift[i] * t)),
                o.velocity.copy(),
            )
            for i, o in enumerate(objects)
        ]
        states.append(WorldState(frame_objects, time=t, ground_z=cfg.ground_z, rng_seed=seed))
    return states

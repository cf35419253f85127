"""Core value types shared by the simulator and everything downstream."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np


class DeviceKind(str, enum.Enum):
    MECHANICAL = "mechanical"
    SOLID_STATE = "solid_state"

    @property
    def code(self) -> int:
        return 0 if self is DeviceKind.MECHANICAL else 1

    @classmethod
    def from_code(cls, code: int) -> "DeviceKind":
        return (cls.MECHANICAL, cls.SOLID_STATE)[code]


def wrap_angle(a):
    """Wrap angle(s) into [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class DeviceModel:
    """Scan lattice and noise model of one LiDAR.

    Mechanical devices sweep ``num_beams`` evenly spaced elevations over
    ``vertical_fov`` and step ``azimuth_step`` degrees around the full circle.
    Solid-state devices raster their fan with ``azimuth_step`` horizontally and
    ``elevation_step`` vertically.
    """

    kind: DeviceKind
    vertical_fov: tuple[float, float]
    horizontal_fov: tuple[float, float]
    azimuth_step: float
    max_range: float
    range_interval: tuple[float, float]
    num_beams: int = 0
    elevation_step: float = 0.0
    dropout_prob: float = 0.0
    range_noise_sigma: float = 0.0

    def __post_init__(self):
        width = self.horizontal_fov[1] - self.horizontal_fov[0]
        if (abs(width - 360.0) < 1e-9) != (self.kind is DeviceKind.MECHANICAL):
            raise ValueError("horizontal_fov must span 360 degrees iff the device is mechanical")
        if self.kind is DeviceKind.MECHANICAL and self.num_beams < 1:
            raise ValueError("mechanical device needs num_beams >= 1")
        if self.kind is DeviceKind.SOLID_STATE and self.elevation_step <= 0:
            raise ValueError("solid-state device needs elevation_step > 0")
        if self.azimuth_step <= 0 or self.max_range <= 0:
            raise ValueError("azimuth_step and max_range must be positive")
        near, far = self.range_interval
        if not (near < far and abs(near) <= self.max_range and abs(far) <= self.max_range):
            raise ValueError(f"range_interval {self.range_interval} not inside max_range {self.max_range}")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")
        if self.range_noise_sigma < 0:
            raise ValueError("range_noise_sigma must be >= 0")

    @property
    def is_fan(self) -> bool:
        return self.kind is DeviceKind.SOLID_STATE

    @property
    def range_center(self) -> float:
        return 0.5 * (self.range_interval[0] + self.range_interval[1])

    def elevations(self) -> np.ndarray:
        lo, hi = self.vertical_fov
        if self.kind is DeviceKind.MECHANICAL:
            return np.linspace(lo, hi, self.num_beams)
        n = int(round((hi - lo) / self.elevation_step)) + 1
        return lo + self.elevation_step * np.arange(n)

    def azimuths(self) -> np.ndarray:
        lo, hi = self.horizontal_fov
        if self.kind is DeviceKind.MECHANICAL:
            n = int(round(360.0 / self.azimuth_step))
            return lo + self.azimuth_step * np.arange(n)
        n = int(round((hi - lo) / self.azimuth_step)) + 1
        return lo + self.azimuth_step * np.arange(n)

    def noiseless(self) -> "DeviceModel":
        return replace(self, dropout_prob=0.0, range_noise_sigma=0.0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "vertical_fov": list(self.vertical_fov),
            "horizontal_fov": list(self.horizontal_fov),
            "azimuth_step": self.azimuth_step,
            "max_range": self.max_range,
            "range_interval": list(self.range_interval),
            "num_beams": self.num_beams,
            "elevation_step": self.elevation_step,
            "dropout_prob": self.dropout_prob,
            "range_noise_sigma": self.range_noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceModel":
        d = dict(d)
        d["kind"] = DeviceKind(d["kind"])
        for key in ("vertical_fov", "horizontal_fov", "range_interval"):
            d[key] = tuple(d[key])
        return cls(**d)


MECHANICAL_32 = DeviceModel(
    kind=DeviceKind.MECHANICAL,
    num_beams=32,
    vertical_fov=(-30.0, 10.0),
    horizontal_fov=(-180.0, 180.0),
    azimuth_step=0.4,
    max_range=50.0,
    range_interval=(-50.0, 50.0),
    dropout_prob=0.02,
    range_noise_sigma=0.02,
)

SOLID_STATE_60 = DeviceModel(
    kind=DeviceKind.SOLID_STATE,
    vertical_fov=(-12.0, 4.0),
    horizontal_fov=(-30.0, 30.0),
    azimuth_step=0.1,
    elevation_step=0.1,
    max_range=100.0,
    range_interval=(0.0, 100.0),
    dropout_prob=0.02,
    range_noise_sigma=0.02,
)

PRESETS = {"mechanical": MECHANICAL_32, "solid_state": SOLID_STATE_60}


@dataclass(frozen=True)
class Box3D:
    """Yaw-rotated cuboid. ``size`` is (length, width, height); length runs along the heading."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError(f"box size must be positive, got {self.size}")
        if not math.isfinite(self.yaw):
            raise ValueError("box yaw must be finite")

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """Express world points in the box frame (translate, then rotate by -yaw)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        d = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        out = np.empty_like(d)
        out[:, 0] = c * d[:, 0] + s * d[:, 1]
        out[:, 1] = -s * d[:, 0] + c * d[:, 1]
        out[:, 2] = d[:, 2]
        return out

    def to_world(self, local: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.asarray(local, dtype=np.float64)
        out = np.empty_like(local)
        out[:, 0] = c * local[:, 0] - s * local[:, 1]
        out[:, 1] = s * local[:, 0] + c * local[:, 1]
        out[:, 2] = local[:, 2]
        return out + np.asarray(self.center)


@dataclass(frozen=True)
class ObjectLabel:
    box: Box3D
    class_id: int
    velocity: tuple[float, float] = (0.0, 0.0)
    confidence: float = 1.0
    object_id: int = -1

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "id": self.object_id,
            "class": self.class_id,
            "center": [float(v) for v in self.box.center],
            "size": [float(v) for v in self.box.size],
            "yaw": float(self.box.yaw),
            "velocity": [float(v) for v in self.velocity],
            "confidence": float(self.confidence),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ObjectLabel":
        return cls(
            box=Box3D(tuple(d["center"]), tuple(d["size"]), float(d["yaw"])),
            class_id=int(d["class"]),
            velocity=tuple(d["velocity"]),
            confidence=float(d["confidence"]),
            object_id=int(d["id"]),
        )


@dataclass
class SimObject:
    object_id: int
    class_id: int
    center: np.ndarray
    size: np.ndarray
    yaw: float
    velocity: np.ndarray

    def box(self) -> Box3D:
        return Box3D(tuple(float(v) for v in self.center), tuple(float(v) for v in self.size), float(self.yaw))


@dataclass
class WorldState:
    objects: list[SimObject]
    time: float
    ground_z: float = -1.7
    rng_seed: int = 0


@dataclass
class PointFrame:
    points: np.ndarray  # (N, 3) float32
    timestamp: float
    device: DeviceModel
    frame_index: int = 0
    extras: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)

    def with_points(self, points: np.ndarray, device: DeviceModel | None = None) -> "PointFrame":
        return PointFrame(
            points=np.ascontiguousarray(points, dtype=np.float32),
            timestamp=self.timestamp,
            device=device or self.device,
            frame_index=self.frame_index,
        )

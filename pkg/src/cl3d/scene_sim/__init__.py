from .benchmark import Benchmark, BenchmarkConfig, Split, make_benchmark
from .render import render_frame
from .types import (
    MECHANICAL_32,
    PRESETS,
    SOLID_STATE_60,
    Box3D,
    DeviceKind,
    DeviceModel,
    ObjectLabel,
    PointFrame,
    WorldState,
    wrap_angle,
)
from .world import BARRIER, CAR, CLASS_GEOMETRY, SimConfig, make_world

__all__ = [
    "BARRIER", "Benchmark", "BenchmarkConfig", "Box3D", "CAR", "CLASS_GEOMETRY", "DeviceKind", "DeviceModel",
    "MECHANICAL_32", "ObjectLabel", "PRESETS", "PointFrame", "SOLID_STATE_60", "SimConfig", "Split",
    "WorldState", "make_benchmark", "make_world", "render_frame", "wrap_angle",
]

"""Paired source/target benchmark splits built from the simulator."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .._fs import atomic_write_text
from .io import read_frame, read_labels, write_frame, write_labels
from .render import render_frame
from .types import PRESETS, DeviceModel, ObjectLabel, PointFrame
from .world import SimConfig, make_world

_SPLIT_CODES = {"source": 0, "target_train": 1, "target_eval": 2, "source_eval": 3}


@dataclass
class BenchmarkConfig:
    source_device: str = "mechanical"
    target_device: str = "solid_state"
    source_sequences: int = 50
    target_train_sequences: int = 50
    target_eval_sequences: int = 50
    source_eval_sequences: int = 20
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> None:
        for name in (self.source_device, self.target_device):
            if name not in PRESETS:
                raise ValueError(f"unknown device preset {name!r}; choose from {sorted(PRESETS)}")
        if self.sim.frames < 2:
            raise ValueError(f"sequences need at least 2 frames, got {self.sim.frames}")
        self.sim.validate()


class Split:
    """Sequences of frames plus their labels.

    Samples are consecutive frame pairs ``(prev, cur)``. When ``withheld`` is
    set, every call to :meth:`labels` flips ``label_access_audit`` so a run can
    prove it never peeked at target-train ground truth.
    """

    def __init__(self, name: str, device: DeviceModel, sequences: list[list[PointFrame]],
                 labels: list[list[list[ObjectLabel]]], seeds: list[int], withheld: bool = False):
        self.name = name
        self.device = device
        self.sequences = sequences
        self._labels = labels
        self.seeds = seeds
        self.withheld = withheld
        self.label_access_audit = False
        self.pairs = [(s, k) for s, seq in enumerate(sequences) for k in range(1, len(seq))]

    def __len__(self) -> int:
        return len(self.pairs)

    def frames(self, i: int) -> tuple[PointFrame, PointFrame]:
        s, k = self.pairs[i]
        return self.sequences[s][k - 1], self.sequences[s][k]

    def labels(self, i: int) -> list[ObjectLabel]:
        if self.withheld:
            self.label_access_audit = True
        s, k = self.pairs[i]
        return self._labels[s][k]

    def sample_key(self, i: int) -> str:
        s, k = self.pairs[i]
        return f"{self.name}/{s:04d}/{k}"

    def save(self, root: Path) -> None:
        root = Path(root) / self.name
        manifest = {"name": self.name, "device": self.device.to_dict(), "withheld": self.withheld,
                    "seeds": self.seeds, "sequences": []}
        for s, seq in enumerate(self.sequences):
            entry = []
            for k, frame in enumerate(seq):
                stem = f"seq_{s:04d}_frame_{k}"
                write_frame(root / f"{stem}.clpf", frame)
                write_labels(root / f"{stem}.labels.jsonl", self._labels[s][k])
                entry.append({"stem": stem, "timestamp": frame.timestamp, "frame_index": frame.frame_index})
            manifest["sequences"].append(entry)
        atomic_write_text(root / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, root: Path, name: str) -> "Split":
        root = Path(root) / name
        manifest = json.loads((root / "manifest.json").read_text())
        device = DeviceModel.from_dict(manifest["device"])
        sequences, labels = [], []
        for entry in manifest["sequences"]:
            sequences.append([
                read_frame(root / f"{e['stem']}.clpf", device, timestamp=e["timestamp"], frame_index=e["frame_index"])
                for e in entry
            ])
            labels.append([read_labels(root / f"{e['stem']}.labels.jsonl") for e in entry])
        return cls(name, device, sequences, labels, manifest["seeds"], manifest["withheld"])


@dataclass
class Benchmark:
    source: Split
    target_train: Split
    target_eval: Split
    source_eval: Split
    config: BenchmarkConfig

    def splits(self) -> list[Split]:
        return [self.source, self.target_train, self.target_eval, self.source_eval]

    def save(self, root: Path) -> None:
        for split in self.splits():
            split.save(root)
        cfg = asdict(self.config)
        atomic_write_text(Path(root) / "benchmark.json", json.dumps(cfg, indent=1, sort_keys=True))

    @classmethod
    def load(cls, root: Path) -> "Benchmark":
        cfg = json.loads((Path(root) / "benchmark.json").read_text())
        sim = SimConfig(**cfg.pop("sim"))
        config = BenchmarkConfig(sim=sim, **cfg)
        return cls(*(Split.load(root, n) for n in ("source", "target_train", "target_eval", "source_eval")), config)


def spawn_config_for(sim: SimConfig, device: DeviceModel) -> SimConfig:
    """Restrict object spawning to the region the device can actually see."""
    if device.is_fan:
        return replace(sim, spawn_fov_min=device.horizontal_fov[0], spawn_fov_max=device.horizontal_fov[1],
                       spawn_max_range=device.range_interval[1] - 2.0)
    return replace(sim, spawn_fov_min=-180.0, spawn_fov_max=180.0, spawn_max_range=device.max_range - 2.0)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _render_sequence(job: tuple[SimConfig, DeviceModel, int]) -> tuple[list[PointFrame], list[list[ObjectLabel]]]:
    sim, device, seed = job
    frames, labels = [], []
    for k, state in enumerate(make_world(sim, seed)):
        frame, labs = render_frame(state, device, _seed(seed, k), frame_index=k)
        frame.extras.clear()
        frames.append(frame)
        labels.append(labs)
    return frames, labels


def resolve_workers(workers: int) -> int:
    """0 means every available core."""
    return workers if workers > 0 else (os.cpu_count() or 1)


def build_split(name: str, device: DeviceModel, sim: SimConfig, count: int, base_seed: int,
                withheld: bool = False, workers: int = 1) -> Split:
    sim = spawn_config_for(sim, device)
    seeds = [_seed(base_seed, _SPLIT_CODES[name], i) for i in range(count)]
    jobs = [(sim, device, seed) for seed in seeds]
    workers = min(resolve_workers(workers), count)
    if workers > 1:
        # sequences are independently seeded, so the pool cannot change the result
        with ProcessPoolExecutor(workers) as pool:
            rendered = list(pool.map(_render_sequence, jobs, chunksize=4))
    else:
        rendered = [_render_sequence(job) for job in jobs]
    return Split(name, device, [r[0] for r in rendered], [r[1] for r in rendered], seeds, withheld)


def make_benchmark(config: BenchmarkConfig, workers: int = 1) -> Benchmark:
    """Render the source split, the label-withheld target train split, and both eval splits."""
    config.validate()
    src, tgt = PRESETS[config.source_device], PRESETS[config.target_device]
    return Benchmark(
        source=build_split("source", src, config.sim, config.source_sequences, config.seed,
                           workers=workers),
        target_train=build_split("target_train", tgt, config.sim, config.target_train_sequences, config.seed,
                                 withheld=True, workers=workers),
        target_eval=build_split("target_eval", tgt, config.sim, config.target_eval_sequences, config.seed,
                                workers=workers),
        source_eval=build_split("source_eval", src, config.sim, config.source_eval_sequences, config.seed,
                                workers=workers),
        config=config,
    )

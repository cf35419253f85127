"""Command-line front end.

Exit codes: 0 ok, 1 runtime failure, 2 usage error. Failures print one line
``error: <kind>: <message>`` to stderr. Logs go to stderr, tables to stdout or files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from ._fs import atomic_write_text
from .config import ConfigError, ExperimentConfig, Mode, dump_config, load_config
from .detector import load_checkpoint
from .errors import CL3DError
from .scene_sim.benchmark import Benchmark, make_benchmark
from .scene_sim.io import read_frame, read_labels

log = logging.getLogger("cl3d")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cl3d", description="Cross-LiDAR 3D detection adaptation on a synthetic benchmark.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, run_dir=True):
        p.add_argument("--config", type=Path, help="flat 'section.key = value' config file")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable")
        if run_dir:
            p.add_argument("--run-dir", type=Path, help="run directory (default: $CL3D_RUN_DIR)")
            p.add_argument("--data", type=Path, help="benchmark written by gen-data (default: regenerate)")

    p = sub.add_parser("gen-data", help="render the benchmark splits to disk")
    common(p, run_dir=False)
    p.add_argument("--out", type=Path, required=True)

    for name, text in (("pretrain", "train on labeled source (or target, in Oracle mode)"),
                       ("pseudo-label", "decode pseudo-labels on the target train split"),
                       ("adapt", "self-train on target pseudo-labels (ST or CL3D)"),
                       ("evaluate", "score a checkpoint on the target eval split")):
        p = sub.add_parser(name, help=text)
        common(p)
        if name == "evaluate":
            p.add_argument("--checkpoint", help="checkpoint name under checkpoints/ (default: by mode)")

    p = sub.add_parser("run-matrix", help="every method and range-strategy arm over several seeds")
    common(p)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")

    p = sub.add_parser("inspect", help="print or export a frame, label file or checkpoint")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--frame", type=Path)
    group.add_argument("--labels", type=Path)
    group.add_argument("--checkpoint", type=Path)
    p.add_argument("--export", choices=("csv", "json"), help="write rows to stdout in this format")
    return parser


def _config(args) -> ExperimentConfig:
    return load_config(args.config, args.override)


def _run_dir(args) -> Path:
    run_dir = args.run_dir or (Path(os.environ["CL3D_RUN_DIR"]) if os.environ.get("CL3D_RUN_DIR") else None)
    if run_dir is None:
        raise UsageError("no run directory: pass --run-dir or set CL3D_RUN_DIR")
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _snapshot(run_dir: Path, cfg: ExperimentConfig) -> None:
    atomic_write_text(run_dir / "config.resolved.cfg", dump_config(cfg))


def _benchmark(args, cfg: ExperimentConfig) -> Benchmark:
    if args.data:
        if not (Path(args.data) / "benchmark.json").exists():
            raise pipeline.MissingPrerequisite(f"no benchmark at {args.data}; run gen-data --out {args.data}")
        return Benchmark.load(args.data)
    return make_benchmark(cfg.benchmark, cfg.runtime.workers)


def _setup_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


# -- subcommands ----------------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    bench = make_benchmark(cfg.benchmark, cfg.runtime.workers)
    bench.save(args.out)
    _snapshot(args.out, cfg)
    print(json.dumps({split.name: len(split) for split in bench.splits()}))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg, run_dir = _config(args), _run_dir(args)
    _snapshot(run_dir, cfg)
    bench = _benchmark(args, cfg)
    if cfg.pipeline.mode is Mode.ORACLE:
        pipeline.save_state(run_dir, "oracle", pipeline.train_oracle(cfg, bench))
    else:
        pipeline.save_state(run_dir, "pretrain", pipeline.pretrain_source(cfg, bench))
    return EXIT_OK


def _target_pairs(cfg, bench):
    return pipeline.target_pairs(bench.target_train, cfg.pipeline.range_strategy)


def cmd_pseudo_label(args) -> int:
    cfg, run_dir = _config(args), _run_dir(args)
    _snapshot(run_dir, cfg)
    state = pipeline.load_state(run_dir, "pretrain")
    bench = _benchmark(args, cfg)
    pairs = _target_pairs(cfg, bench)
    pseudo = pipeline.generate_pseudo_labels(state, pairs, cfg.pipeline.score_floor, cfg.eval.max_detections)
    pipeline.write_pseudo(run_dir / "pseudo_labels" / "round_0.jsonl", pairs, pseudo)
    print(json.dumps({"samples": len(pairs), "pseudo_labels": sum(map(len, pseudo))}))
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg, run_dir = _config(args), _run_dir(args)
    mode = cfg.pipeline.mode
    if mode not in (Mode.ST, Mode.CL3D):
        raise UsageError(f"adapt needs pipeline.mode ST or CL3D, got {mode.value}")
    _snapshot(run_dir, cfg)
    state = pipeline.load_state(run_dir, "pretrain")
    bench = _benchmark(args, cfg)
    pairs = _target_pairs(cfg, bench)
    store = None
    if mode is Mode.CL3D and cfg.prototype.seed_on_source:
        store = pipeline.seed_prototypes(state, cfg, pipeline.source_samples(bench.source, cfg.pipeline.range_strategy))
    for rnd in range(cfg.pipeline.rounds):
        path = run_dir / "pseudo_labels" / f"round_{rnd}.jsonl"
        if path.exists():
            pseudo = pipeline.read_pseudo(path, pairs)
        else:
            pseudo = pipeline.generate_pseudo_labels(state, pairs, cfg.pipeline.score_floor, cfg.eval.max_detections)
            pipeline.write_pseudo(path, pairs, pseudo)
        state = pipeline.self_train(state, cfg, pairs, pseudo, mode, store, tag=f"selftrain{rnd}")
        pipeline.save_state(run_dir, f"selftrain_{rnd}", state)
        if store is not None:
            pipeline.write_prototypes(run_dir / "checkpoints" / f"prototypes_{rnd}.json", store)
    if bench.target_train.label_access_audit:
        raise RuntimeError("target-train labels were read during adaptation")
    return EXIT_OK


def _default_checkpoint(cfg: ExperimentConfig) -> str:
    if cfg.pipeline.mode is Mode.ORACLE:
        return "oracle"
    if cfg.pipeline.mode is Mode.DT:
        return "pretrain"
    return f"selftrain_{cfg.pipeline.rounds - 1}"


def cmd_evaluate(args) -> int:
    cfg, run_dir = _config(args), _run_dir(args)
    _snapshot(run_dir, cfg)
    state = pipeline.load_state(run_dir, args.checkpoint or _default_checkpoint(cfg))
    bench = _benchmark(args, cfg)
    metrics = pipeline.evaluate(state, cfg, bench.target_eval, cfg.pipeline.range_strategy)
    row = pipeline.metrics_row(cfg, metrics)
    pipeline.write_metrics(run_dir, [row])
    print(json.dumps(row, sort_keys=True))
    return EXIT_OK


def cmd_run_matrix(args) -> int:
    cfg, run_dir = _config(args), _run_dir(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    _snapshot(run_dir, cfg)
    rows = pipeline.run_matrix(cfg, seeds, run_dir)
    summary = pipeline.summarize(rows)
    writer = csv.DictWriter(sys.stdout, fieldnames=list(summary[0].keys()), lineterminator="\n")
    writer.writeheader()
    for row in summary:
        writer.writerow({k: ("n/a" if v is None else v) for k, v in row.items()})
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.frame:
        frame = read_frame(args.frame)
        if args.export == "csv":
            writer = csv.writer(sys.stdout, lineterminator="\n")
            writer.writerow(["x", "y", "z"])
            writer.writerows(frame.points.tolist())
        elif args.export == "json":
            print(json.dumps({"device": frame.device.kind.value, "points": frame.points.tolist()}))
        else:
            pts = frame.points
            lo, hi = (pts.min(0).tolist(), pts.max(0).tolist()) if len(pts) else (None, None)
            print(json.dumps({"device": frame.device.kind.value, "points": len(pts), "min": lo, "max": hi}))
    elif args.labels:
        labels = read_labels(args.labels)
        if args.export == "csv":
            writer = csv.writer(sys.stdout, lineterminator="\n")
            writer.writerow(["id", "class", "x", "y", "z", "l", "w", "h", "yaw", "vx", "vy", "confidence"])
            for lab in labels:
                writer.writerow([lab.object_id, lab.class_id, *lab.box.center, *lab.box.size, lab.box.yaw,
                                 *lab.velocity, lab.confidence])
        else:
            print(json.dumps([lab.to_json() for lab in labels]))
    else:
        state = load_checkpoint(args.checkpoint)
        rows = [(name, "x".join(map(str, p.shape)), float(np.abs(p).mean())) for name, p in state.params.items()]
        if args.export == "csv":
            writer = csv.writer(sys.stdout, lineterminator="\n")
            writer.writerow(["param", "shape", "mean_abs"])
            writer.writerows(rows)
        else:
            print(json.dumps({"step": state.step, "params": {n: s for n, s, _ in rows}}))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "pseudo-label": cmd_pseudo_label,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "run-matrix": cmd_run_matrix,
    "inspect": cmd_inspect,
}


def _fail(kind: str, exc: BaseException, code: int) -> int:
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {kind}: {message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        level = "INFO"
        if getattr(args, "config", None) is not None or getattr(args, "override", None):
            level = _config(args).runtime.log_level
        _setup_logging(level)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except pipeline.MissingPrerequisite as exc:
        return _fail("missing-prerequisite", exc, EXIT_RUNTIME)
    except CL3DError as exc:
        return _fail(exc.code, exc, EXIT_RUNTIME)
    except (OSError, ValueError, RuntimeError) as exc:
        return _fail("runtime", exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())

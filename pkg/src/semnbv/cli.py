"""Command-line front end: run experiments, validate scenes, replay logs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ParseError, RunConfig, config_lines, parse_config
from .harness import SceneError, load_scene_file, run
from .metrics import EmptyInput, MetricSample, summarize


def _config_defaults_text() -> str:
    lines = config_lines(RunConfig())
    return "config file keys and their defaults:\n  " + "\n  ".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semnbv",
        description="Headless search-and-acquisition simulator for semantic view planning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser(
        "run",
        help="execute one experiment",
        epilog=_config_defaults_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p_run.add_argument("--scene", required=True, help="scene description file")
    p_run.add_argument("--config", required=True, help="key = value run configuration file")
    p_run.add_argument("--out", required=True, help="output directory for logs")
    p_run.add_argument("--seed", type=int, default=None, help="override rng_seed")
    p_run.add_argument(
        "--planner",
        choices=("semantic_nbv", "rh_nbv_baseline"),
        default=None,
        help="override the configured planner",
    )

    p_val = sub.add_parser("validate-scene", help="check a scene file and describe it")
    p_val.add_argument("path")

    p_rep = sub.add_parser("replay-metrics", help="recompute summaries from a run's metrics.csv")
    p_rep.add_argument("rundir")
    return parser


def _print_summary(summary, finished: bool, sim_time: float, reason: str, rounds: int):
    print(f"finished = {'true' if finished else 'false'}")
    print(f"reason = {reason}")
    print(f"sim_time_s = {sim_time!r}")
    print(f"rounds = {rounds}")
    if summary is None:
        print("samples = 0")
        return
    print(f"samples = {summary.sample_count}")
    print(f"mean_directivity = {summary.mean_directivity!r}")
    print(f"std_directivity = {summary.std_directivity!r}")
    print("histogram = " + " ".join(str(c) for c in summary.histogram))
    print(f"final_roi_ratio = {summary.final_roi_ratio!r}")
    print(f"final_roi_progress = {summary.final_roi_progress!r}")


def cmd_run(args) -> int:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config {args.config!r}: {exc}", file=sys.stderr)
        return 2
    try:
        config = parse_config(text)
        overrides = {"scene_path": args.scene}
        if args.seed is not None:
            overrides["rng_seed"] = args.seed
        if args.planner is not None:
            overrides["planner"] = args.planner
        config = RunConfig(**{**_as_dict(config), **overrides})
        result = run(config, args.out)
    except (ParseError, ConfigError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_summary(result.summary, result.finished, result.sim_time, result.reason, result.rounds)
    for name in ("header", "rounds", "gains", "metrics", "trajectory"):
        print(f"{name} = {result.files[name]}")
    return 0


def _as_dict(config: RunConfig) -> dict:
    from dataclasses import asdict

    return asdict(config)


def cmd_validate_scene(args) -> int:
    try:
        scene = load_scene_file(args.path)
    except SceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    lo = [repr(float(v)) for v in scene.bounds_min]
    hi = [repr(float(v)) for v in scene.bounds_max]
    print(f"bounds = {' '.join(lo)} -> {' '.join(hi)}")
    print(f"objects = {len(scene.objects)}")
    print(f"targets = {' '.join(scene.targets) if scene.targets else '(none)'}")
    for cat, pos in sorted(scene.target_positions.items()):
        print(f"target_position {cat} = " + " ".join(repr(float(v)) for v in pos))
    print("ok")
    return 0


def cmd_replay_metrics(args) -> int:
    path = Path(args.rundir) / "metrics.csv"
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return 2
    samples = []
    for line in lines[1:]:
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 8:
            continue
        samples.append(
            MetricSample(
                sim_time=float(parts[0]),
                directivity=float(parts[1]),
                roi_voxels_reconstructed=int(parts[2]),
                total_voxels_reconstructed=int(parts[3]),
                roi_ratio=float(parts[4]),
                roi_progress=float(parts[5]),
            )
        )
    try:
        summary = summarize(samples)
    except EmptyInput:
        print("samples = 0")
        return 0
    print(f"samples = {summary.sample_count}")
    print(f"mean_directivity = {summary.mean_directivity!r}")
    print(f"std_directivity = {summary.std_directivity!r}")
    print("histogram = " + " ".join(str(c) for c in summary.histogram))
    print(f"final_roi_ratio = {summary.final_roi_ratio!r}")
    print(f"final_roi_progress = {summary.final_roi_progress!r}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "validate-scene":
        return cmd_validate_scene(args)
    return cmd_replay_metrics(args)


if __name__ == "__main__":
    sys.exit(main())

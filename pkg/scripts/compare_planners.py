#!/usr/bin/env python3
"""Run the semantic-aware planner and the visibility-only baseline side by
side over a batch of seeds and print per-seed and aggregate statistics.

Example:
    python scripts/compare_planners.py --scene scenes/collapsed_room.scene \
        --config configs/collapsed_room.cfg --seeds 5 --out /tmp/compare
"""

import argparse
import csv
import statistics
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

from semnbv.config import RunConfig, parse_config
from semnbv.harness import run

PLANNERS = ("semantic_nbv", "rh_nbv_baseline")


def load_base_config(path: str, scene: str) -> RunConfig:
    cfg = parse_config(Path(path).read_text()) if path else RunConfig()
    return replace(cfg, scene_path=scene)


def first_detection(header_path: Path) -> float | None:
    for line in header_path.read_text().splitlines():
        if line.startswith("# first_detection_s"):
            value = float(line.split("=")[1])
            if value != float("inf"):
                return value
    return None


def post_detection_directivity(out: Path) -> tuple:
    """Mean directivity and the high-bin fraction after the first detection."""
    det = first_detection(out / "header.txt")
    if det is None:
        return float("nan"), float("nan"), 0
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh, skipinitialspace=True))
    vals = [float(r["directivity"]) for r in rows if float(r["sim_time_s"]) >= det]
    if not vals:
        return float("nan"), float("nan"), 0
    mean = sum(vals) / len(vals)
    frac = sum(1 for v in vals if 0.5 <= v <= 1.0) / len(vals)
    return mean, frac, len(vals)


def final_row(out: Path) -> dict:
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh, skipinitialspace=True))
    return rows[-1] if rows else {}


def one_run(base: RunConfig, planner: str, seed: int, out: Path) -> dict:
    cfg = replace(base, planner=planner, rng_seed=seed)
    t0 = time.perf_counter()
    result = run(cfg, out)
    last = final_row(out)
    mean, frac, n = post_detection_directivity(out)
    return {
        "planner": planner,
        "seed": seed,
        "finished": result.finished,
        "sim_time": result.sim_time,
        "rounds": result.rounds,
        "post_mean": mean,
        "post_frac": frac,
        "post_n": n,
        "roi_ratio": float(last.get("roi_ratio", "nan")),
        "roi_progress": float(last.get("roi_progress", "nan")),
        "wall": time.perf_counter() - t0,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scene", required=True)
    parser.add_argument("--config", default="")
    parser.add_argument("--seeds", type=int, default=5, help="number of seeds, 0..N-1")
    parser.add_argument("--out", required=True, help="directory for all run outputs")
    args = parser.parse_args(argv)

    base = load_base_config(args.config, args.scene)
    root = Path(args.out)
    rows = []
    for seed in range(args.seeds):
        for planner in PLANNERS:
            out = root / f"{planner}_seed{seed}"
            row = one_run(base, planner, seed, out)
            rows.append(row)
            print(
                f"{planner:16s} seed={seed} finished={row['finished']!s:5s} "
                f"sim={row['sim_time']:7.2f}s rounds={row['rounds']:3d} "
                f"post_mean={row['post_mean']:+.3f} post_frac={row['post_frac']:.3f} "
                f"roi_ratio={row['roi_ratio']:.5f} progress={row['roi_progress']:.3f} "
                f"[{row['wall']:.1f}s]"
            )
            sys.stdout.flush()

    print()
    for planner in PLANNERS:
        sub = [r for r in rows if r["planner"] == planner]
        mean_post = statistics.fmean(r["post_mean"] for r in sub)
        mean_ratio = statistics.fmean(r["roi_ratio"] for r in sub)
        mean_prog = statistics.fmean(r["roi_progress"] for r in sub)
        fin = sum(r["finished"] for r in sub)
        print(
            f"{planner:16s} mean_post_directivity={mean_post:+.3f} "
            f"mean_roi_ratio={mean_ratio:.5f} mean_progress={mean_prog:.3f} "
            f"finished={fin}/{len(sub)}"
        )
    sem = [r for r in rows if r["planner"] == "semantic_nbv"]
    rh = [r for r in rows if r["planner"] == "rh_nbv_baseline"]
    wins = sum(1 for s, b in zip(sem, rh) if s["roi_ratio"] > b["roi_ratio"])
    gap = statistics.fmean(r["post_mean"] for r in sem) - statistics.fmean(r["post_mean"] for r in rh)
    print(f"\npost-detection directivity gap = {gap:+.3f}; roi_ratio wins {wins}/{len(sem)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Experiment orchestration: the perception-planning-execution loop.

One run loads a scene, flies the simulated platform round by round, and
writes four CSV logs plus a header echoing every resolved parameter.
Motion is a kinematic point under velocity, acceleration, and yaw-rate
caps; planning consumes no simulated time (wall-clock planning cost is
logged separately).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import scene as scene_mod
from .config import ConfigError, RunConfig, config_lines
from .gain import GainParams, TargetList
from .geometry import CameraModel, Pose, wrap_angle
from .mapping import MapPair, OCCUPIED, unpack_indices
from .metrics import (
    MetricSample,
    MetricsConfig,
    MetricsSummary,
    build_roi_mask,
    directivity,
    roi_metrics,
    summarize,
)
from .planner import PlannerConfig, PlannerState, _baseline_round, step
from .scene import apply_label_dropout, load_scene, render

SENSOR_PERIOD = 0.5
NO_PROGRESS_ROUNDS = 20


class SceneError(ValueError):
    """Scene file failed to load or validate."""


@dataclass(frozen=True)
class MotionLimits:
    """Platform kinematic caps plus the arrival tolerance scale."""

    max_velocity: float
    max_acceleration: float
    max_yaw_rate: float
    voxel_size: float


@dataclass(frozen=True)
class MotionState:
    """Kinematic point state at one simulation instant."""

    pose: Pose
    velocity: np.ndarray
    yaw_rate: float
    sim_time: float


@dataclass(frozen=True)
class RunResult:
    """What a finished run reports back."""

    finished: bool
    sim_time: float
    reason: str
    rounds: int
    files: dict
    summary: MetricsSummary | None


def waypoint_reached(state: MotionState, waypoint: Pose, limits: MotionLimits) -> bool:
    pos_err = float(np.linalg.norm(waypoint.position - state.pose.position))
    yaw_err = abs(wrap_angle(waypoint.yaw - state.pose.yaw))
    return pos_err < 0.5 * limits.voxel_size and yaw_err < 0.05


def advance_motion(state: MotionState, waypoint: Pose, limits: MotionLimits, dt: float) -> MotionState:
    """One kinematic step toward the waypoint.

    Speed follows a trapezoidal profile: commanded as the braking-limited
    sqrt(2 a d), reached through an acceleration-clamped change, capped at
    max_velocity and at the no-overshoot bound d/dt.  Yaw slews at most
    max_yaw_rate toward the waypoint heading.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive: {dt}")
    delta = waypoint.position - state.pose.position
    dist = float(np.linalg.norm(delta))
    speed = float(np.linalg.norm(state.velocity))
    if dist < 1e-12:
        new_speed = max(0.0, speed - limits.max_acceleration * dt)
        direction = state.velocity / speed if speed > 1e-12 else np.zeros(3)
    else:
        direction = delta / dist
        command = min(limits.max_velocity, math.sqrt(2.0 * limits.max_acceleration * dist))
        new_speed = min(
            max(command, speed - limits.max_acceleration * dt),
            speed + limits.max_acceleration * dt,
            limits.max_velocity,
            dist / dt,
        )
    velocity = direction * new_speed
    position = state.pose.position + velocity * dt

    yaw_err = wrap_angle(waypoint.yaw - state.pose.yaw)
    yaw_step = max(-limits.max_yaw_rate * dt, min(limits.max_yaw_rate * dt, yaw_err))
    return MotionState(
        pose=Pose(position=position, yaw=state.pose.yaw + yaw_step, pitch=state.pose.pitch),
        velocity=velocity,
        yaw_rate=yaw_step / dt,
        sim_time=state.sim_time + dt,
    )


def load_scene_file(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SceneError(f"cannot read scene {path!r}: {exc}") from exc
    try:
        return load_scene(text)
    except (scene_mod.ParseError, scene_mod.ValidationError) as exc:
        raise SceneError(f"{path}: {exc}") from exc


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _csv(rows: list, header: str) -> str:
    return "\n".join([header] + rows) + "\n"


class _RunLog:
    """Accumulates the four CSV logs as deterministic text."""

    def __init__(self):
        self.rounds: list = []
        self.gains: list = []
        self.metrics: list = []
        self.trajectory: list = []

    def round_row(self, rnd, sim_time, k, target_index, n_nodes, gain, dom, waypoint):
        self.rounds.append(
            ", ".join(
                [
                    str(rnd),
                    _fmt(sim_time),
                    "1" if k else "0",
                    str(target_index),
                    str(n_nodes),
                    _fmt(gain.combined),
                    _fmt(gain.s_unknown),
                    _fmt(gain.s_refine),
                    _fmt(gain.s_surround),
                    str(dom),
                    _fmt(waypoint.position[0]),
                    _fmt(waypoint.position[1]),
                    _fmt(waypoint.position[2]),
                    _fmt(waypoint.yaw),
                ]
            )
        )

    def gain_rows(self, rnd, k, branch_trace):
        for branch_id, n_nodes, gain in branch_trace:
            self.gains.append(
                ", ".join(
                    [
                        str(rnd),
                        str(branch_id),
                        str(n_nodes),
                        _fmt(gain.visibility),
                        _fmt(gain.s_unknown),
                        _fmt(gain.s_refine),
                        _fmt(gain.s_surround),
                        _fmt(gain.combined),
                        "1" if k else "0",
                    ]
                )
            )

    def metric_row(self, sample: MetricSample, target_index: int, k: bool):
        self.metrics.append(
            ", ".join(
                [
                    _fmt(sample.sim_time),
                    _fmt(sample.directivity),
                    str(sample.roi_voxels_reconstructed),
                    str(sample.total_voxels_reconstructed),
                    _fmt(sample.roi_ratio),
                    _fmt(sample.roi_progress),
                    str(target_index),
                    "1" if k else "0",
                ]
            )
        )

    def trajectory_row(self, state: MotionState):
        p = state.pose.position
        self.trajectory.append(
            ", ".join([_fmt(state.sim_time), _fmt(p[0]), _fmt(p[1]), _fmt(p[2]), _fmt(state.pose.yaw)])
        )


ROUNDS_HEADER = (
    "round, sim_time_s, K, target_index, n_tree_nodes, best_combined, "
    "s_unknown, s_refine, s_surround, dominance_count, "
    "waypoint_x, waypoint_y, waypoint_z, waypoint_yaw"
)
GAINS_HEADER = (
    "round, branch_id, n_nodes, visibility, s_unknown, s_refine, s_surround, combined, K"
)
METRICS_HEADER = (
    "sim_time_s, directivity, roi_voxels, total_voxels, roi_ratio, roi_progress, "
    "target_index, K"
)
TRAJECTORY_HEADER = "sim_time_s, x, y, z, yaw"


def _round_seed(master: int, rnd: int) -> int:
    return int(np.random.SeedSequence([master, rnd]).generate_state(1)[0])


def _detected(maps, category: str, conf_min: float) -> bool:
    members = maps.category_members(category)
    if members.size == 0:
        return False
    idx = unpack_indices(members)
    occ = maps.states_at(idx) == OCCUPIED
    if not np.any(occ):
        return False
    lab = maps.labelled.gather(idx, "label_count").astype(np.float64)
    obs = maps.labelled.gather(idx, "observation_count").astype(np.float64)
    conf = np.where(obs > 0, lab / np.maximum(obs, 1.0), 0.0)
    return bool(np.any(occ & (conf >= conf_min)))


class _Sampler:
    """Metric sampling at waypoints and on a fixed simulated-time period."""

    def __init__(self, scene, maps, config: RunConfig, log: _RunLog):
        self.scene = scene
        self.maps = maps
        self.config = config
        self.log = log
        self.metrics_config = MetricsConfig(
            target_positions=dict(scene.target_positions),
            roi_dilation=config.roi_dilation,
            sample_period=config.sample_period,
        )
        self.mask = build_roi_mask(scene, config.voxel_size, self.metrics_config)
        self.samples: list = []
        self.next_due = 0.0

    def anchor_category(self, target_index: int) -> str:
        roster = self.scene.targets
        clamped = min(max(target_index, 1), len(roster))
        return roster[clamped - 1]

    def take(self, motion: MotionState, target_index: int, k: bool):
        cat = self.anchor_category(target_index)
        d = directivity(motion.pose, self.metrics_config.target_positions[cat])
        counts = roi_metrics(self.maps, self.scene, self.metrics_config, target_index, mask=self.mask)
        sample = MetricSample(
            sim_time=motion.sim_time,
            directivity=d,
            roi_voxels_reconstructed=counts.roi_voxels_reconstructed,
            total_voxels_reconstructed=counts.total_voxels_reconstructed,
            roi_ratio=counts.roi_ratio,
            roi_progress=counts.roi_progress,
        )
        self.samples.append(sample)
        self.log.metric_row(sample, target_index, k)
        self.next_due = motion.sim_time + self.config.sample_period

    def take_if_due(self, motion: MotionState, target_index: int, k: bool):
        if motion.sim_time >= self.next_due:
            self.take(motion, target_index, k)


def run(config: RunConfig, out_dir) -> RunResult:
    """Execute one full experiment and write its logs under out_dir."""
    if not config.scene_path:
        raise ConfigError("scene_path is required")
    scene = load_scene_file(config.scene_path)
    if not scene.targets:
        raise SceneError(f"{config.scene_path}: scene declares no targets")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    camera = CameraModel(
        horizontal_fov=math.radians(config.camera_hfov_deg),
        vertical_fov=math.radians(config.camera_vfov_deg),
        width=config.camera_width,
        height=config.camera_height,
        max_range=config.camera_max_range,
    )
    maps = MapPair(voxel_size=config.voxel_size)
    params = GainParams(
        lambda1=config.lambda1,
        lambda2=config.lambda2,
        eta_tgt=config.eta_tgt,
        n_exp=config.n_exp,
        lambda_o=config.lambda_o,
        lambda_l=config.lambda_l,
        conf_min=config.conf_min,
        target_category=scene.targets[0],
    )
    planner_config = PlannerConfig(
        max_nodes=config.max_nodes,
        extension_radius=config.extension_radius,
        rewire_radius=config.rewire_radius,
        yaw_samples=config.yaw_samples,
        robot_radius=config.robot_radius,
        rng_seed=config.rng_seed,
    )
    semantic = config.planner == "semantic_nbv"
    state = PlannerState(
        roster=scene.targets, c_thre=config.c_thre, dominance_ratio=config.dominance_ratio
    )
    targets = TargetList(config.voxel_size)

    x, y, z, yaw = config.start_pose
    motion = MotionState(
        pose=Pose(position=np.array([x, y, z]), yaw=yaw),
        velocity=np.zeros(3),
        yaw_rate=0.0,
        sim_time=0.0,
    )
    limits = MotionLimits(
        max_velocity=config.max_velocity,
        max_acceleration=config.max_acceleration,
        max_yaw_rate=config.max_yaw_rate,
        voxel_size=config.voxel_size,
    )
    # the platform occupies its start pose, so that ball is known collision-free
    maps.mark_free_sphere(motion.pose.position, config.robot_radius + 2.0 * config.voxel_size)

    log = _RunLog()
    sampler = _Sampler(scene, maps, config, log)
    label_rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, 0xD0]))
    detection_times = {cat: math.inf for cat in scene.targets}
    planning_wall = 0.0
    observed_total = 0

    def integrate_now() -> int:
        nonlocal observed_total
        frame = render(scene, motion.pose, camera)
        if config.label_dropout > 0.0:
            frame = apply_label_dropout(frame, config.label_dropout, label_rng)
        summary = maps.integrate(motion.pose, frame, camera)
        observed_total += summary.newly_observed
        for cat in scene.targets:
            if math.isinf(detection_times[cat]) and _detected(maps, cat, config.conf_min):
                detection_times[cat] = motion.sim_time
        return summary.newly_observed

    reason = "max_sim_time"
    finished = False
    rounds = 0
    stall = 0

    if config.max_sim_time > 0:
        integrate_now()
        sampler.take(motion, state.target_index, state.mode_k)
        log.trajectory_row(motion)
        while True:
            if motion.sim_time >= config.max_sim_time:
                reason = "max_sim_time"
                break
            rounds += 1
            round_config = replace(planner_config, rng_seed=_round_seed(config.rng_seed, rounds))
            t0 = time.perf_counter()
            if semantic:
                waypoint, diag = step(
                    state,
                    maps,
                    targets,
                    params,
                    motion.pose,
                    round_config,
                    camera,
                    workers=config.parallel_workers,
                )
            else:
                waypoint, diag = _baseline_round(
                    maps,
                    motion.pose,
                    round_config,
                    camera,
                    config.lambda_exp,
                    workers=config.parallel_workers,
                )
            planning_wall += time.perf_counter() - t0
            log.round_row(
                rounds,
                motion.sim_time,
                diag.mode_k,
                diag.target_index,
                diag.n_tree_nodes,
                diag.gain,
                diag.dominance_count,
                waypoint,
            )
            log.gain_rows(rounds, diag.mode_k, diag.branch_trace)
            if semantic and state.finished:
                reason = "finished"
                finished = True
                break

            newly = 0
            next_sense = motion.sim_time + SENSOR_PERIOD
            while not waypoint_reached(motion, waypoint, limits):
                if motion.sim_time >= config.max_sim_time:
                    break
                motion = advance_motion(motion, waypoint, limits, config.sim_timestep)
                log.trajectory_row(motion)
                if motion.sim_time >= next_sense:
                    newly += integrate_now()
                    sampler.take_if_due(motion, diag.target_index, diag.mode_k)
                    next_sense = motion.sim_time + SENSOR_PERIOD
            if motion.sim_time >= config.max_sim_time and not waypoint_reached(motion, waypoint, limits):
                reason = "max_sim_time"
                break
            newly += integrate_now()
            sampler.take(motion, diag.target_index, diag.mode_k)

            stall = stall + 1 if newly == 0 else 0
            if stall >= NO_PROGRESS_ROUNDS:
                reason = "no_progress"
                break

    files = {
        "header": out / "header.txt",
        "rounds": out / "rounds.csv",
        "gains": out / "gains.csv",
        "metrics": out / "metrics.csv",
        "trajectory": out / "trajectory.csv",
    }
    files["rounds"].write_text(_csv(log.rounds, ROUNDS_HEADER), newline="\n")
    files["gains"].write_text(_csv(log.gains, GAINS_HEADER), newline="\n")
    files["metrics"].write_text(_csv(log.metrics, METRICS_HEADER), newline="\n")
    files["trajectory"].write_text(_csv(log.trajectory, TRAJECTORY_HEADER), newline="\n")

    header = config_lines(config)
    header.append(f"# scene_targets = {' '.join(scene.targets)}")
    for cat in scene.targets:
        header.append(f"# first_detection_s {cat} = {_fmt(detection_times[cat])}")
    header.append(f"# exit_reason = {reason}")
    header.append(f"# finished = {'true' if finished else 'false'}")
    header.append(f"# sim_time_s = {_fmt(motion.sim_time)}")
    header.append(f"# rounds = {rounds}")
    header.append(f"# mode_switches = {_fmt_switches(log.rounds)}")
    header.append(f"# planning_wall_clock_s = {planning_wall:.3f}")
    files["header"].write_text("\n".join(header) + "\n", newline="\n")

    summary = summarize(sampler.samples) if sampler.samples else None
    return RunResult(
        finished=finished,
        sim_time=motion.sim_time,
        reason=reason,
        rounds=rounds,
        files={k: str(v) for k, v in files.items()},
        summary=summary,
    )


def _fmt_switches(round_rows: list) -> str:
    """Compressed K trace: count of K transitions over the round log."""
    ks = [row.split(", ")[2] for row in round_rows]
    flips = sum(1 for a, b in zip(ks, ks[1:]) if a != b)
    return str(flips)

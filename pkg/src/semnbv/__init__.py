"""Semantic-aware next-best-view planning and simulation toolkit."""

from .config import ConfigError, ParseError, RunConfig, parse_config
from .gain import BranchGain, GainContext, GainParams, TargetList, branch_gain, update_target_list
from .geometry import CameraModel, Pose, VoxelIndex, voxel_center, voxel_of
from .harness import MotionLimits, MotionState, RunResult, SceneError, advance_motion, run
from .mapping import FREE, MapPair, OCCUPIED, UNKNOWN
from .metrics import (
    MetricSample,
    MetricsConfig,
    MetricsSummary,
    build_roi_mask,
    directivity,
    roi_metrics,
    summarize,
)
from .planner import (
    Finished,
    NoFreeSpace,
    PlannerConfig,
    PlannerState,
    ViewNode,
    baseline_rh_nbv_step,
    grow_tree,
    select_best_branch,
    step,
)
from .scene import Scene, load_scene, render

__all__ = [
    "BranchGain",
    "CameraModel",
    "ConfigError",
    "FREE",
    "Finished",
    "GainContext",
    "GainParams",
    "MapPair",
    "MetricSample",
    "MetricsConfig",
    "MetricsSummary",
    "MotionLimits",
    "MotionState",
    "NoFreeSpace",
    "OCCUPIED",
    "ParseError",
    "PlannerConfig",
    "PlannerState",
    "Pose",
    "RunConfig",
    "RunResult",
    "Scene",
    "SceneError",
    "TargetList",
    "UNKNOWN",
    "ViewNode",
    "VoxelIndex",
    "advance_motion",
    "baseline_rh_nbv_step",
    "branch_gain",
    "build_roi_mask",
    "directivity",
    "grow_tree",
    "load_scene",
    "parse_config",
    "render",
    "roi_metrics",
    "run",
    "select_best_branch",
    "step",
    "summarize",
    "update_target_list",
    "voxel_center",
    "voxel_of",
]

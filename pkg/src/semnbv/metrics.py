"""Privileged-knowledge evaluation of a run.

Everything here may look at the ground-truth scene; nothing here feeds
back into planning.  Directivity measures how well the optical axis
tracks the true target position, and the region-of-interest counters
measure how much of the reconstruction effort lands near the targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import Pose, optical_axis
from .mapping import pack_indices
from .scene import Scene, ground_truth_voxels


class DegenerateGeometry(ValueError):
    """Directivity is undefined when the camera sits on the target."""


class EmptyInput(ValueError):
    """Raised by summaries over zero samples."""


@dataclass
class MetricsConfig:
    """Evaluation parameters.

    target_positions maps each roster category to its true center;
    roi_dilation is the radius (metres) of surroundings counted as part
    of each target's region of interest.
    """

    target_positions: dict = field(default_factory=dict)
    roi_dilation: float = 1.0
    sample_period: float = 2.0

    def __post_init__(self):
        if self.roi_dilation < 0:
            raise ValueError(f"roi_dilation must be non-negative: {self.roi_dilation}")
        if self.sample_period <= 0:
            raise ValueError(f"sample_period must be positive: {self.sample_period}")
        self.target_positions = {
            str(k): np.asarray(v, dtype=np.float64).reshape(3)
            for k, v in self.target_positions.items()
        }


@dataclass(frozen=True)
class MetricSample:
    """One evaluation row."""

    sim_time: float
    directivity: float
    roi_voxels_reconstructed: int
    total_voxels_reconstructed: int
    roi_ratio: float
    roi_progress: float


@dataclass(frozen=True)
class RoiCounts:
    """Reconstruction counters of one roi_metrics evaluation."""

    roi_voxels_reconstructed: int
    total_voxels_reconstructed: int
    roi_ratio: float
    roi_progress: float


@dataclass(frozen=True)
class RoiMask:
    """Precomputed voxel sets: the dilated region and the true surface in it."""

    roi_keys: np.ndarray
    surface_keys: np.ndarray
    voxel_size: float


@dataclass(frozen=True)
class MetricsSummary:
    """Aggregate over one run's samples."""

    mean_directivity: float
    std_directivity: float
    histogram: tuple
    final_roi_ratio: float
    final_roi_progress: float
    sample_count: int


def directivity(pose: Pose, target_position: np.ndarray) -> float:
    """Cosine of the angle between the optical axis and the target line."""
    target = np.asarray(target_position, dtype=np.float64).reshape(3)
    v = target - pose.position
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise DegenerateGeometry("camera position coincides with the target")
    c = float(optical_axis(pose) @ v) / n
    return min(1.0, max(-1.0, c))


_NEIGHBORS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def build_roi_mask(scene: Scene, voxel_size: float, config: MetricsConfig) -> RoiMask:
    """Resolve the region of interest around the scene's targets.

    The region is the union, over every roster target, of that target's
    ground-truth voxels dilated by roi_dilation (a closed Euclidean ball
    on voxel centers).  The surface set is every ground-truth object
    voxel inside the region with at least one empty 6-neighbor; only
    surface voxels are reachable by a depth sensor, so reconstruction
    progress is normalized by their count.
    """
    missing = [c for c in scene.targets if c not in config.target_positions]
    if missing:
        raise ValueError(f"target_positions missing roster categories: {missing}")
    gt = ground_truth_voxels(scene, voxel_size)
    roster = set(scene.targets)
    seeds = np.array(
        [idx for idx, (cat, _) in gt.items() if cat in roster], dtype=np.int64
    ).reshape(-1, 3)
    if seeds.shape[0] == 0:
        empty = np.empty(0, dtype=np.int64)
        return RoiMask(roi_keys=empty, surface_keys=empty, voxel_size=voxel_size)

    pad = int(math.ceil(config.roi_dilation / voxel_size)) + 1
    lo = seeds.min(axis=0) - pad
    hi = seeds.max(axis=0) + pad
    shape = tuple(hi - lo + 1)
    grid = np.zeros(shape, dtype=bool)
    grid[tuple((seeds - lo).T)] = True
    dist = ndimage.distance_transform_edt(~grid, sampling=voxel_size)
    ri, rj, rk = np.nonzero(dist <= config.roi_dilation + 1e-9)
    roi = np.stack([ri, rj, rk], axis=1) + lo
    roi_keys = np.sort(pack_indices(roi))

    roi_set = set(map(tuple, roi))
    surface = []
    for idx in gt:
        cell = (idx[0], idx[1], idx[2])
        if cell not in roi_set:
            continue
        for di, dj, dk in _NEIGHBORS:
            if (cell[0] + di, cell[1] + dj, cell[2] + dk) not in gt:
                surface.append(cell)
                break
    surface_arr = np.array(sorted(surface), dtype=np.int64).reshape(-1, 3)
    surface_keys = pack_indices(surface_arr) if surface_arr.size else np.empty(0, dtype=np.int64)
    return RoiMask(roi_keys=roi_keys, surface_keys=np.sort(surface_keys), voxel_size=voxel_size)


def roi_metrics(maps, scene: Scene, config: MetricsConfig, target_index: int = 1, mask: RoiMask | None = None) -> RoiCounts:
    """Count reconstructed voxels inside and outside the region of interest.

    target_index tags which roster entry the sample is attributed to; the
    region itself is the union over all targets, so multi-target runs are
    scored against everything they are expected to recover.  Pass a
    prebuilt mask when sampling repeatedly.
    """
    if mask is None:
        mask = build_roi_mask(scene, maps.voxel_size, config)
    occ = maps.occupied_indices()
    total = int(occ.shape[0])
    if total == 0:
        in_roi = 0
    else:
        occ_keys = pack_indices(occ)
        in_roi = int(np.isin(occ_keys, mask.roi_keys).sum())
    if mask.surface_keys.size and total:
        observed = int(np.isin(mask.surface_keys, occ_keys).sum())
    else:
        observed = 0
    return RoiCounts(
        roi_voxels_reconstructed=in_roi,
        total_voxels_reconstructed=total,
        roi_ratio=in_roi / max(1, total),
        roi_progress=observed / max(1, int(mask.surface_keys.size)),
    )


def _bin_of(d: float) -> int:
    if d <= -0.5:
        return 0
    if d <= 0.0:
        return 1
    if d <= 0.5:
        return 2
    return 3


def summarize(samples: list) -> MetricsSummary:
    """Mean and population spread of directivity, plus final-state counters.

    The histogram uses the four right-closed bins between -1 and 1, so a
    sample of exactly 0.5 lands in the third bin and 1.0 in the fourth.
    """
    if not samples:
        raise EmptyInput("no metric samples to summarize")
    d = np.array([s.directivity for s in samples], dtype=np.float64)
    hist = [0, 0, 0, 0]
    for x in d:
        hist[_bin_of(float(x))] += 1
    return MetricsSummary(
        mean_directivity=float(d.mean()),
        std_directivity=float(d.std()),
        histogram=tuple(hist),
        final_roi_ratio=samples[-1].roi_ratio,
        final_roi_progress=samples[-1].roi_progress,
        sample_count=len(samples),
    )

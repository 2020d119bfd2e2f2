"""Ground-truth environment: labelled box geometry and the synthetic sensor.

The scene is a set of axis-aligned boxes with category labels inside a
bounding volume.  ``render`` is the idealized depth + segmentation camera:
per-pixel nearest ray/box intersection with perfect labels.  Ground-truth
target positions are carried for the metrics module only and must never
reach the planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, Pose, VoxelIndex, generate_rays

BACKGROUND = "background"


class ParseError(ValueError):
    """Scene file is syntactically malformed; message carries the line number."""


class ValidationError(ValueError):
    """Scene file parsed but violates a structural invariant."""


class PoseInsideGeometry(ValueError):
    """Requested render pose collides with scene geometry."""


@dataclass(frozen=True)
class SceneObject:
    """Axis-aligned labelled box."""

    minimum: np.ndarray
    maximum: np.ndarray
    category: str
    instance_id: int

    def __post_init__(self):
        lo = np.array(self.minimum, dtype=np.float64).reshape(3)
        hi = np.array(self.maximum, dtype=np.float64).reshape(3)
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)
        if not np.all(lo < hi):
            raise ValidationError(
                f"object {self.instance_id}: min corner must be < max corner"
            )
        if self.instance_id <= 0:
            raise ValidationError(f"instance_id must be positive: {self.instance_id}")

    def contains(self, point: np.ndarray) -> bool:
        """Half-open membership test: min <= p < max on every axis."""
        p = np.asarray(point)
        return bool(np.all(p >= self.minimum) and np.all(p < self.maximum))


@dataclass(frozen=True)
class Scene:
    """World bounds, labelled objects, and the ordered target roster.

    ``target_positions`` is privileged ground truth for metrics; no
    planner-facing code receives the Scene.
    """

    bounds_min: np.ndarray
    bounds_max: np.ndarray
    objects: tuple
    targets: tuple
    target_positions: dict

    def __post_init__(self):
        lo = np.array(self.bounds_min, dtype=np.float64).reshape(3)
        hi = np.array(self.bounds_max, dtype=np.float64).reshape(3)
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "bounds_min", lo)
        object.__setattr__(self, "bounds_max", hi)
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not np.all(lo < hi):
            raise ValidationError("bounds: min corner must be < max corner")
        seen_ids = set()
        categories = set()
        for obj in self.objects:
            if obj.instance_id in seen_ids:
                raise ValidationError(f"duplicate instance_id {obj.instance_id}")
            seen_ids.add(obj.instance_id)
            categories.add(obj.category)
            if not (np.all(obj.minimum >= lo) and np.all(obj.maximum <= hi)):
                raise ValidationError(
                    f"object {obj.instance_id} extends outside scene bounds"
                )
        for cat in self.targets:
            if cat not in categories:
                raise ValidationError(f"target category {cat!r} has no object")


@dataclass(frozen=True)
class SensorFrame:
    """Idealized depth + segmentation output of one render.

    depth is metres with inf where no surface lies within max_range;
    category/instance are the hit object's labels (background / 0 at misses).
    """

    depth: np.ndarray
    category: np.ndarray
    instance: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def apply_label_dropout(
    frame: SensorFrame, probability: float, rng: np.random.Generator
) -> SensorFrame:
    """Degrade segmentation: each labelled pixel reverts to background with
    the given probability.  Depth is untouched.  probability 0 returns the
    frame unchanged (same object)."""
    if probability <= 0.0:
        return frame
    if probability > 1.0:
        raise ValueError(f"dropout probability above 1: {probability}")
    drop = rng.random(frame.depth.shape) < probability
    category = frame.category.copy()
    instance = frame.instance.copy()
    category[drop] = BACKGROUND
    instance[drop] = 0
    return SensorFrame(depth=frame.depth, category=category, instance=instance)


def load_scene(text: str) -> Scene:
    """Parse the line-based scene format and validate all invariants.

    Grammar (whitespace separated, ``#`` starts a comment):
      bounds xmin ymin zmin xmax ymax zmax
      object <category> <instance_id> xmin ymin zmin xmax ymax zmax
      target <category>
      target_position <category> x y z
    """
    bounds = None
    objects = []
    targets = []
    target_positions = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        keyword, args = tokens[0], tokens[1:]
        try:
            if keyword == "bounds":
                if bounds is not None:
                    raise ParseError(f"line {lineno}: duplicate bounds line")
                if len(args) != 6:
                    raise ParseError(f"line {lineno}: bounds needs 6 numbers")
                vals = [float(a) for a in args]
                bounds = (vals[:3], vals[3:])
            elif keyword == "object":
                if len(args) != 8:
                    raise ParseError(
                        f"line {lineno}: object needs category, id and 6 numbers"
                    )
                cat = args[0]
                inst = int(args[1])
                vals = [float(a) for a in args[2:]]
                objects.append(SceneObject(vals[:3], vals[3:], cat, inst))
            elif keyword == "target":
                if len(args) != 1:
                    raise ParseError(f"line {lineno}: target needs one category")
                targets.append(args[0])
            elif keyword == "target_position":
                if len(args) != 4:
                    raise ParseError(
                        f"line {lineno}: target_position needs category and 3 numbers"
                    )
                target_positions[args[0]] = np.array(
                    [float(a) for a in args[1:]], dtype=np.float64
                )
            else:
                raise ParseError(f"line {lineno}: unknown keyword {keyword!r}")
        except (ParseError, ValidationError):
            raise
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
    if bounds is None:
        raise ParseError("missing bounds line")
    return Scene(bounds[0], bounds[1], objects, targets, target_positions)


def _pose_collides(scene: Scene, position: np.ndarray) -> bool:
    return any(obj.contains(position) for obj in scene.objects)


def render(scene: Scene, pose: Pose, camera: CameraModel) -> SensorFrame:
    """Render one synthetic sensor frame from a pose.

    Slab-method ray/box intersection over every object; each pixel reports
    the nearest hit within max_range.  On exact depth ties the object that
    appears first in the scene file wins.
    """
    if _pose_collides(scene, pose.position):
        raise PoseInsideGeometry(f"pose position {pose.position} is inside an object")
    h, w = camera.height, camera.width
    dirs = generate_rays(camera, pose, step=1)  # (h*w, 3)
    n = dirs.shape[0]
    depth = np.full(n, np.inf)
    hit_obj = np.full(n, -1, dtype=np.int64)
    origin = pose.position
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    zero = dirs == 0.0
    for oi, obj in enumerate(scene.objects):
        with np.errstate(invalid="ignore"):
            t0 = (obj.minimum[None, :] - origin[None, :]) * inv
            t1 = (obj.maximum[None, :] - origin[None, :]) * inv
        entry = np.minimum(t0, t1)
        exit_ = np.maximum(t0, t1)
        # axis-parallel rays: the slab constrains nothing when the origin
        # coordinate lies inside (half-open, matching SceneObject.contains)
        # and can never be met otherwise
        inside = (obj.minimum[None, :] <= origin[None, :]) & (
            origin[None, :] < obj.maximum[None, :]
        )
        entry = np.where(zero, np.where(inside, -np.inf, np.inf), entry)
        exit_ = np.where(zero, np.where(inside, np.inf, -np.inf), exit_)
        t_near = entry.max(axis=1)
        t_far = exit_.min(axis=1)
        hit = (t_near <= t_far) & (t_near > 0.0) & (t_near <= camera.max_range)
        closer = hit & (t_near < depth)
        depth[closer] = t_near[closer]
        hit_obj[closer] = oi
    category = np.full(n, BACKGROUND, dtype=object)
    instance = np.zeros(n, dtype=np.int64)
    for oi, obj in enumerate(scene.objects):
        mask = hit_obj == oi
        category[mask] = obj.category
        instance[mask] = obj.instance_id
    return SensorFrame(
        depth=depth.reshape(h, w),
        category=category.reshape(h, w),
        instance=instance.reshape(h, w),
    )


def ground_truth_voxels(scene: Scene, voxel_size: float) -> dict:
    """Map every voxel whose center lies inside an object to its label.

    Returns {VoxelIndex: (category, instance_id)}.  Overlapping boxes are
    resolved by the lowest instance_id.  Privileged knowledge: metrics only.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    out = {}
    for obj in sorted(scene.objects, key=lambda o: o.instance_id):
        lo = np.floor(obj.minimum / voxel_size - 0.5).astype(np.int64)
        hi = np.ceil(obj.maximum / voxel_size).astype(np.int64)
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for k in range(lo[2], hi[2] + 1):
                    center = (np.array([i, j, k], dtype=np.float64) + 0.5) * voxel_size
                    if obj.contains(center):
                        key = VoxelIndex(i, j, k)
                        if key not in out:
                            out[key] = (obj.category, obj.instance_id)
    return out

"""View utility: visibility gain, semantic gain, and branch scoring.

The semantic gain of a voxel depends on its map state: unseen voxels near
already-confirmed target structure score by an exponential falloff of the
distance to the confirmed set, confirmed target voxels score by how much
their reconstruction still wants refinement, and labelled non-target
structure near the target scores a smaller surround term.  Branch scores
sum per-node gains discounted by the reciprocal of accumulated path
length, in visibility mode (k_mode) or semantic mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, spatial

from . import kernels
from .geometry import CameraModel, Pose, VoxelIndex, camera_basis, voxel_center
from .mapping import (
    BACKGROUND_ID,
    OCCUPIED,
    UNKNOWN,
    DenseSnapshot,
    LabelledVoxel,
    pack_indices,
    unpack_indices,
)

# above this many target voxels, nearest-member queries go through a
# spatial index instead of the brute-force scan
_BRUTE_FORCE_LIMIT = 2000


class EmptyBranch(ValueError):
    """branch_gain was handed an empty branch."""


@dataclass
class GainParams:
    """Weights and mode switches for gain evaluation.

    lambda1/lambda2 discount the unknown/surround exponentials, eta_tgt
    scales the refinement term, n_exp is the ray count at which a target
    voxel is considered fully sampled, lambda_o/lambda_l set the
    reciprocal path-length costs, k_mode selects visibility (True) or
    semantic (False) scoring for the combined utility.
    """

    lambda1: float = 0.5
    lambda2: float = 0.5
    eta_tgt: float = 2.0
    n_exp: float = 10.0
    lambda_o: float = 1.0
    lambda_l: float = 1.0
    k_mode: bool = True
    target_category: str = ""
    conf_min: float = 0.5

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "eta_tgt", "n_exp", "lambda_o", "lambda_l"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite: {v}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1/lambda2 must be non-negative")
        if self.eta_tgt <= 0 or self.n_exp <= 0:
            raise ValueError("eta_tgt and n_exp must be positive")
        if self.lambda_o <= 0 or self.lambda_l <= 0:
            raise ValueError("lambda_o and lambda_l must be positive")
        if not 0.0 <= self.conf_min <= 1.0:
            raise ValueError(f"conf_min out of [0, 1]: {self.conf_min}")


@dataclass(frozen=True)
class BranchGain:
    """Distance-discounted gain sums of one tree branch."""

    visibility: float
    s_unknown: float
    s_refine: float
    s_surround: float
    combined: float

    @property
    def semantic(self) -> float:
        return self.s_unknown + self.s_refine + self.s_surround


class TargetList:
    """Grows-only set of confirmed target voxels (cleared between targets)."""

    def __init__(self, voxel_size: float):
        self.voxel_size = float(voxel_size)
        self._keys: set = set()
        self.version = 0
        self._centers = None
        self._tree = None

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, index) -> bool:
        key = int(pack_indices(np.asarray(index, dtype=np.int64)))
        return key in self._keys

    @property
    def voxels(self) -> frozenset:
        return frozenset(VoxelIndex(*r) for r in unpack_indices(self.packed()))

    def packed(self) -> np.ndarray:
        """Member keys, ascending (deterministic iteration order)."""
        return np.array(sorted(self._keys), dtype=np.int64)

    def centers(self) -> np.ndarray:
        if self._centers is None:
            if not self._keys:
                self._centers = np.empty((0, 3))
            else:
                self._centers = (
                    unpack_indices(self.packed()).astype(np.float64) + 0.5
                ) * self.voxel_size
        return self._centers

    def add(self, index) -> bool:
        key = int(pack_indices(np.asarray(index, dtype=np.int64)))
        if key in self._keys:
            return False
        self._keys.add(key)
        self._invalidate()
        return True

    def add_packed(self, keys: np.ndarray) -> int:
        before = len(self._keys)
        self._keys.update(int(k) for k in keys)
        added = len(self._keys) - before
        if added:
            self._invalidate()
        return added

    def clear(self):
        if self._keys:
            self._keys.clear()
            self._invalidate()

    def _invalidate(self):
        self.version += 1
        self._centers = None
        self._tree = None

    def nearest_distance(self, point: np.ndarray) -> float:
        """Euclidean distance from a point to the closest member center."""
        if not self._keys:
            return math.inf
        point = np.asarray(point, dtype=np.float64)
        centers = self.centers()
        if len(self._keys) <= _BRUTE_FORCE_LIMIT:
            return float(np.min(np.linalg.norm(centers - point[None, :], axis=1)))
        if self._tree is None:
            self._tree = spatial.cKDTree(centers)
        return float(self._tree.query(point)[0])


def refine_factor(voxel: LabelledVoxel, params: GainParams, occupancy_weight: float) -> float:
    """Remaining refinement value of a confirmed target voxel, in [0, 1].

    Drops as the observed ray count moves away from the expected count and
    as the co-located occupancy weight grows.
    """
    diff = abs(float(voxel.ray_count) - params.n_exp)
    w = float(occupancy_weight)
    return (1.0 - diff / (1.0 + diff)) * (1.0 - w / (1.0 + w))


def v_gain(maps, voxel) -> float:
    """1 for a voxel that would newly enter the map, else 0."""
    return 1.0 if maps.state_of(np.asarray(voxel, dtype=np.int64)) == UNKNOWN else 0.0


def s_gain(maps, voxel, targets: TargetList, params: GainParams) -> float:
    """Semantic gain of one voxel (piecewise by state and label)."""
    idx = np.asarray(voxel, dtype=np.int64)
    state = maps.state_of(idx)
    if state == UNKNOWN:
        d = targets.nearest_distance(voxel_center(idx, maps.voxel_size))
        return math.exp(-params.lambda1 * d) if math.isfinite(d) else 0.0
    if state == OCCUPIED:
        lv = maps.labelled_voxel_at(idx)
        if lv.category == params.target_category and params.target_category:
            w = maps.occupancy_voxel_at(idx).weight
            return params.eta_tgt * refine_factor(lv, params, w)
        if maps.category_id(lv.category) != BACKGROUND_ID:
            d = targets.nearest_distance(voxel_center(idx, maps.voxel_size))
            return math.exp(-params.lambda2 * d) if math.isfinite(d) else 0.0
    return 0.0


def visible_voxels(maps, pose: Pose, camera: CameraModel) -> list:
    """Every voxel whose center the sensor can see from this pose.

    Membership: center inside the view frustum and line of sight clear of
    OCCUPIED voxels (the first occupied voxel on a sight line is itself
    visible; unknown space does not occlude).  Result is duplicate-free in
    ascending index order.
    """
    vs = maps.voxel_size
    r_cells = int(math.ceil(camera.max_range / vs)) + 1
    center_cell = np.floor(pose.position / vs).astype(np.int64)
    lo = center_cell - r_cells
    side = 2 * r_cells + 1
    snap = maps.build_snapshot(lo, (side, side, side))
    forward, right, up = camera_basis(pose)
    out = np.empty((side**3, 3), dtype=np.int64)
    # zero clearance keeps the enumeration on the plain cell-by-cell walk
    no_leap = np.zeros(snap.shape, dtype=np.float64)
    n = kernels.visible_list(
        snap.state,
        no_leap,
        int(lo[0]),
        int(lo[1]),
        int(lo[2]),
        vs,
        float(pose.position[0]),
        float(pose.position[1]),
        float(pose.position[2]),
        float(forward[0]),
        float(forward[1]),
        float(forward[2]),
        float(right[0]),
        float(right[1]),
        float(right[2]),
        float(up[0]),
        float(up[1]),
        float(up[2]),
        math.tan(0.5 * camera.horizontal_fov),
        math.tan(0.5 * camera.vertical_fov),
        camera.max_range,
        out,
    )
    return [VoxelIndex(int(a), int(b), int(c)) for a, b, c in out[:n]]


def occupied_clearance(snap: DenseSnapshot) -> np.ndarray:
    """Per-cell Euclidean distance (grid units) to the nearest occupied cell.

    Lets sight-line walks leap across provably blocker-free spans.  A map
    with no occupied voxels gets a uniform large clearance.
    """
    mask = snap.state != OCCUPIED
    if mask.all():
        return np.full(snap.shape, 1e6)
    return ndimage.distance_transform_edt(mask)


def distance_field(snap: DenseSnapshot, targets: TargetList) -> np.ndarray:
    """Per-cell distance to the nearest target-list voxel center.

    Exact Euclidean over the snapshot lattice; +inf everywhere when the
    list is empty (the exponential gain cases then vanish).
    """
    if len(targets) == 0:
        return np.full(snap.shape, np.inf)
    mask = np.ones(snap.shape, dtype=bool)
    cells = unpack_indices(targets.packed()) - snap.lo[None, :]
    inside = np.all((cells >= 0) & (cells < np.array(snap.shape)[None, :]), axis=1)
    cells = cells[inside]
    if cells.shape[0] == 0:
        return np.full(snap.shape, np.inf)
    mask[cells[:, 0], cells[:, 1], cells[:, 2]] = False
    return ndimage.distance_transform_edt(mask, sampling=snap.voxel_size)


class GainContext:
    """Shared per-round evaluation state: one snapshot, one distance field.

    Node evaluations against a context are pure and independent, so they
    may run concurrently; build one context per planning round.
    """

    def __init__(self, maps, targets: TargetList, params: GainParams, camera: CameraModel):
        # a slim margin suffices: the kernel treats cells beyond the stored
        # box as the unobserved vacuum they are
        lo, shape = maps.planning_domain(2.0 * maps.voxel_size)
        self.snap = maps.build_snapshot(lo, shape)
        self.d_li = distance_field(self.snap, targets)
        self.occ_clearance = occupied_clearance(self.snap)
        self.target_centers = np.ascontiguousarray(targets.centers(), dtype=np.float64)
        self.target_cat = maps.category_id(params.target_category) if params.target_category else -1
        self.params = params
        self.camera = camera
        self._tan_h = math.tan(0.5 * camera.horizontal_fov)
        self._tan_v = math.tan(0.5 * camera.vertical_fov)

    def node_terms(self, position: np.ndarray, yaw: float) -> tuple:
        """(visibility, s_unknown, s_refine, s_surround) for one view."""
        forward, right, up = camera_basis(Pose(position=position, yaw=yaw))
        snap = self.snap
        return kernels.gain_terms(
            snap.state,
            self.occ_clearance,
            snap.category,
            snap.ray_count,
            snap.occ_weight,
            self.d_li,
            self.target_centers,
            int(snap.lo[0]),
            int(snap.lo[1]),
            int(snap.lo[2]),
            snap.voxel_size,
            float(position[0]),
            float(position[1]),
            float(position[2]),
            float(forward[0]),
            float(forward[1]),
            float(forward[2]),
            float(right[0]),
            float(right[1]),
            float(right[2]),
            float(up[0]),
            float(up[1]),
            float(up[2]),
            self._tan_h,
            self._tan_v,
            self.camera.max_range,
            self.target_cat,
            self.params.lambda1,
            self.params.lambda2,
            self.params.eta_tgt,
            self.params.n_exp,
        )


def combine_terms(terms: list, params: GainParams) -> BranchGain:
    """Fold per-node (terms, root_distance) pairs into a BranchGain."""
    vis = s_unk = s_ref = s_sur = 0.0
    for (v, su, sr, ss), delta in terms:
        f_o = 1.0 / (params.lambda_o * delta)
        f_l = 1.0 / (params.lambda_l * delta)
        vis += v * f_o
        s_unk += su * f_l
        s_ref += sr * f_l
        s_sur += ss * f_l
    k = 1.0 if params.k_mode else 0.0
    combined = k * vis + (1.0 - k) * (s_unk + s_ref + s_sur)
    return BranchGain(
        visibility=vis,
        s_unknown=s_unk,
        s_refine=s_ref,
        s_surround=s_sur,
        combined=combined,
    )


def branch_gain(maps, branch, targets: TargetList, params: GainParams, camera: CameraModel) -> BranchGain:
    """Score a root-to-leaf branch of candidate views.

    ``branch`` is a list of (node, edge_length) pairs in root-first order;
    each node carries .position and .yaw.  Per-node gains are discounted
    by the reciprocal of the accumulated path length from the root, so the
    root itself (distance zero) contributes nothing.
    """
    if not branch:
        raise EmptyBranch("branch must contain at least the root")
    ctx = GainContext(maps, targets, params, camera)
    terms = []
    cum = 0.0
    for node, edge_length in branch:
        cum += float(edge_length)
        if cum <= 0.0:
            continue
        terms.append((ctx.node_terms(node.position, node.yaw), cum))
    return combine_terms(terms, params)


def update_target_list(maps, targets: TargetList, params: GainParams) -> int:
    """Admit newly confirmed target voxels into the list.

    A voxel qualifies once it is OCCUPIED, carries the target category, and
    its label confidence reaches conf_min.  Members are never removed here;
    clearing is the mode machine's job.  Returns how many were added.
    """
    if not params.target_category:
        return 0
    members = maps.category_members(params.target_category)
    if members.size == 0:
        return 0
    fresh = np.setdiff1d(members, targets.packed(), assume_unique=False)
    if fresh.size == 0:
        return 0
    idx = unpack_indices(fresh)
    occupied = maps.states_at(idx) == OCCUPIED
    lab = maps.labelled.gather(idx, "label_count").astype(np.float64)
    obs = maps.labelled.gather(idx, "observation_count").astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = np.where(obs > 0, lab / np.maximum(obs, 1e-300), 0.0)
    keep = occupied & (conf >= params.conf_min)
    return targets.add_packed(fresh[keep])

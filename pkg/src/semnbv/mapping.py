"""Incremental dual-layer voxel map: occupancy TSDF + labelled layer.

Both layers share one sparse block-hash indexing scheme: space is split
into cubic blocks of ``block_side``^3 voxels, allocated on demand and
stored in a dict keyed by packed block coordinates.  Absent blocks read as
UNKNOWN / background and reads never allocate.

Integration is vectorized: each sensor frame is turned into ray samples
from the origin to hit + truncation distance, grouped per voxel, and
merged by weighted averaging.  Voxel state is derived, never stored:
UNKNOWN below the weight floor, OCCUPIED within the occupancy band of the
surface, FREE otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, Pose, VoxelIndex, generate_rays

UNKNOWN = 0
FREE = 1
OCCUPIED = 2
STATE_NAMES = ("UNKNOWN", "FREE", "OCCUPIED")

BACKGROUND_ID = 0

# Packed-index layout: 21 bits per axis, offset to keep keys positive.
_OFF = 1 << 20
_BITS = 21


class DimensionMismatch(ValueError):
    """Sensor frame shape does not match the camera model."""


def pack_indices(idx: np.ndarray) -> np.ndarray:
    """Pack (n, 3) signed voxel indices into scalar int64 keys."""
    idx = np.asarray(idx, dtype=np.int64)
    return (
        ((idx[..., 0] + _OFF) << (2 * _BITS))
        | ((idx[..., 1] + _OFF) << _BITS)
        | (idx[..., 2] + _OFF)
    )


def unpack_indices(keys: np.ndarray) -> np.ndarray:
    """Inverse of pack_indices; returns (n, 3) int64."""
    keys = np.asarray(keys, dtype=np.int64)
    i = (keys >> (2 * _BITS)) - _OFF
    j = ((keys >> _BITS) & ((1 << _BITS) - 1)) - _OFF
    k = (keys & ((1 << _BITS) - 1)) - _OFF
    return np.stack([i, j, k], axis=-1)


def classify_states(
    weight: np.ndarray, distance: np.ndarray, w_min: float, d_occ: float
) -> np.ndarray:
    """Vectorized voxel state table (uint8)."""
    state = np.full(np.shape(weight), FREE, dtype=np.uint8)
    known = weight >= w_min
    state[~known] = UNKNOWN
    state[known & (distance < d_occ)] = OCCUPIED
    return state


@dataclass(frozen=True)
class OccupancyVoxel:
    """Read view of one occupancy-layer voxel."""

    distance: float
    weight: float
    state: int


@dataclass(frozen=True)
class LabelledVoxel:
    """Read view of one labelled-layer voxel."""

    instance: int
    category: str
    label_count: int
    observation_count: int
    ray_count: int

    @property
    def confidence(self) -> float:
        if self.observation_count <= 0:
            return 0.0
        return self.label_count / self.observation_count


class BlockHashMap:
    """Spatially hashed blocks of voxels; per-block dense field arrays.

    FIELDS is a tuple of (name, dtype, fill value); subclasses set it.
    """

    FIELDS: tuple = ()

    def __init__(self, voxel_size: float, block_side: int = 8):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if block_side < 1 or (block_side & (block_side - 1)) != 0:
            raise ValueError(f"block_side must be a power of two: {block_side}")
        self.voxel_size = float(voxel_size)
        self.block_side = int(block_side)
        self._shift = block_side.bit_length() - 1
        self._mask = block_side - 1
        self.blocks: dict = {}

    def split(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Block keys and local flat offsets for (n, 3) voxel indices."""
        idx = np.asarray(idx, dtype=np.int64)
        block = idx >> self._shift
        local = idx & self._mask
        bs = self.block_side
        flat = (local[..., 0] * bs + local[..., 1]) * bs + local[..., 2]
        return pack_indices(block), flat

    def _new_block(self) -> dict:
        n = self.block_side**3
        return {name: np.full(n, fill, dtype=dtype) for name, dtype, fill in self.FIELDS}

    def ensure(self, bkey: int) -> dict:
        blk = self.blocks.get(bkey)
        if blk is None:
            blk = self._new_block()
            self.blocks[bkey] = blk
        return blk

    def gather(self, idx: np.ndarray, name: str) -> np.ndarray:
        """Field values at (n, 3) voxel indices; absent blocks read the fill."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        dtype, fill = next((d, f) for nm, d, f in self.FIELDS if nm == name)
        out = np.full(idx.shape[0], fill, dtype=dtype)
        if idx.shape[0] == 0:
            return out
        bkeys, flat = self.split(idx)
        uniq, inverse = np.unique(bkeys, return_inverse=True)
        for bi, bkey in enumerate(uniq):
            blk = self.blocks.get(int(bkey))
            if blk is None:
                continue
            sel = inverse == bi
            out[sel] = blk[name][flat[sel]]
        return out

    def fill_dense(self, lo: np.ndarray, shape: tuple, name: str, out: np.ndarray):
        """Copy a field into a dense array covering voxels [lo, lo+shape)."""
        bs = self.block_side
        lo = np.asarray(lo, dtype=np.int64)
        hi = lo + np.asarray(shape, dtype=np.int64)
        for bkey, blk in self.blocks.items():
            borigin = unpack_indices(np.array([bkey]))[0] * bs
            a = np.maximum(borigin, lo)
            b = np.minimum(borigin + bs, hi)
            if np.any(a >= b):
                continue
            src = blk[name].reshape(bs, bs, bs)[
                a[0] - borigin[0] : b[0] - borigin[0],
                a[1] - borigin[1] : b[1] - borigin[1],
                a[2] - borigin[2] : b[2] - borigin[2],
            ]
            out[
                a[0] - lo[0] : b[0] - lo[0],
                a[1] - lo[1] : b[1] - lo[1],
                a[2] - lo[2] : b[2] - lo[2],
            ] = src

    def allocated_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Voxel-index AABB [lo, hi) covering all allocated blocks."""
        if not self.blocks:
            return None
        coords = unpack_indices(np.fromiter(self.blocks.keys(), dtype=np.int64))
        lo = coords.min(axis=0) * self.block_side
        hi = (coords.max(axis=0) + 1) * self.block_side
        return lo, hi


class OccupancyMap(BlockHashMap):
    FIELDS = (("distance", np.float64, 0.0), ("weight", np.float64, 0.0))

    def merge(
        self, keys: np.ndarray, sum_w: np.ndarray, sum_wd: np.ndarray, cap: float
    ) -> int:
        """Weighted-average merge of grouped samples into unique voxels.

        keys are packed voxel indices (unique), sum_w/sum_wd the per-voxel
        accumulated weight and weight*distance.  The weight cap is applied
        after the merge.  Returns the number of first-touched voxels.
        """
        idx = unpack_indices(keys)
        bkeys, flat = self.split(idx)
        uniq, inverse = np.unique(bkeys, return_inverse=True)
        newly = 0
        for bi, bkey in enumerate(uniq):
            blk = self.ensure(int(bkey))
            sel = inverse == bi
            loc = flat[sel]
            w_old = blk["weight"][loc]
            d_old = blk["distance"][loc]
            add_w = sum_w[sel]
            w_new = w_old + add_w
            d_new = (w_old * d_old + sum_wd[sel]) / w_new
            blk["weight"][loc] = np.minimum(w_new, cap)
            blk["distance"][loc] = d_new
            newly += int(np.count_nonzero((w_old == 0.0) & (add_w > 0.0)))
        return newly


class LabelledMap(BlockHashMap):
    FIELDS = (
        ("instance", np.int64, 0),
        ("category", np.int32, BACKGROUND_ID),
        ("label_count", np.int64, 0),
        ("observation_count", np.int64, 0),
        ("ray_count", np.int64, 0),
    )


@dataclass
class IntegrationSummary:
    """Result of one frame integration."""

    voxels_updated: int
    newly_observed: int
    newly_labelled: dict


@dataclass(frozen=True)
class DenseSnapshot:
    """Dense read-only copy of a rectangular map region.

    Arrays are indexed [i - lo[0], j - lo[1], k - lo[2]]; cells outside any
    allocated block carry the layer fill values (UNKNOWN / background).
    """

    lo: np.ndarray  # (3,) int64 voxel index of the region origin
    voxel_size: float
    state: np.ndarray  # uint8
    category: np.ndarray  # int32 interned ids, 0 = background
    ray_count: np.ndarray  # int64
    occ_weight: np.ndarray  # float64

    @property
    def shape(self) -> tuple:
        return self.state.shape


class MapView:
    """Read-only facade over a MapPair handed to planning code.

    Exposes the query surface only; integration stays with the owner.
    """

    def __init__(self, maps: "MapPair"):
        self._maps = maps

    def __getattr__(self, name):
        if name in (
            "voxel_size",
            "block_side",
            "tau",
            "weight_cap",
            "w_min",
            "d_occ",
            "revision",
            "state_of",
            "states_at",
            "occupancy_voxel_at",
            "labelled_voxel_at",
            "occupancy_weights_at",
            "is_path_free",
            "category_id",
            "category_name",
            "category_members",
            "free_bounds",
            "occupied_indices",
            "build_snapshot",
            "planning_domain",
            "occupancy",
            "labelled",
        ):
            return getattr(self._maps, name)
        raise AttributeError(name)


class MapPair:
    """Occupancy TSDF layer + labelled layer over shared spatial indexing."""

    def __init__(self, voxel_size: float = 0.2, block_side: int = 8):
        self.occupancy = OccupancyMap(voxel_size, block_side)
        self.labelled = LabelledMap(voxel_size, block_side)
        self.voxel_size = float(voxel_size)
        self.block_side = int(block_side)
        # TSDF constants: truncation, weight cap, weight floor, occupancy band.
        self.tau = 4.0 * voxel_size
        self.weight_cap = 1e4
        self.w_min = 1e-3
        self.d_occ = float(voxel_size)
        self.revision = 0
        self._cat_names = ["background"]
        self._cat_ids = {"background": BACKGROUND_ID}
        self._cat_members: dict = {}
        self._snapshot_cache = None

    # -- category interning -------------------------------------------------
    def category_id(self, name: str, create: bool = False) -> int:
        cid = self._cat_ids.get(name)
        if cid is None:
            if not create:
                return -1
            cid = len(self._cat_names)
            self._cat_names.append(name)
            self._cat_ids[name] = cid
        return cid

    def category_name(self, cid: int) -> str:
        return self._cat_names[cid]

    def category_members(self, name: str) -> np.ndarray:
        """Packed keys of all voxels currently assigned this category."""
        cid = self._cat_ids.get(name)
        members = self._cat_members.get(cid)
        if not members:
            return np.empty(0, dtype=np.int64)
        return np.fromiter(members, dtype=np.int64, count=len(members))

    # -- queries -------------------------------------------------------------
    def read_view(self) -> MapView:
        return MapView(self)

    def states_at(self, idx: np.ndarray) -> np.ndarray:
        """Voxel states (uint8) for (n, 3) indices."""
        weight = self.occupancy.gather(idx, "weight")
        dist = self.occupancy.gather(idx, "distance")
        return classify_states(weight, dist, self.w_min, self.d_occ)

    def state_of(self, index) -> int:
        return int(self.states_at(np.asarray(index, dtype=np.int64).reshape(1, 3))[0])

    def occupancy_weights_at(self, idx: np.ndarray) -> np.ndarray:
        return self.occupancy.gather(idx, "weight")

    def occupancy_voxel_at(self, index) -> OccupancyVoxel:
        idx = np.asarray(index, dtype=np.int64).reshape(1, 3)
        w = float(self.occupancy.gather(idx, "weight")[0])
        d = float(self.occupancy.gather(idx, "distance")[0])
        return OccupancyVoxel(distance=d, weight=w, state=self.state_of(index))

    def labelled_voxel_at(self, index) -> LabelledVoxel:
        idx = np.asarray(index, dtype=np.int64).reshape(1, 3)
        return LabelledVoxel(
            instance=int(self.labelled.gather(idx, "instance")[0]),
            category=self._cat_names[int(self.labelled.gather(idx, "category")[0])],
            label_count=int(self.labelled.gather(idx, "label_count")[0]),
            observation_count=int(self.labelled.gather(idx, "observation_count")[0]),
            ray_count=int(self.labelled.gather(idx, "ray_count")[0]),
        )

    def occupied_indices(self) -> np.ndarray:
        """Indices (n, 3) of every OCCUPIED voxel, sorted by packed key."""
        keys = []
        bs = self.block_side
        for bkey in sorted(self.occupancy.blocks):
            blk = self.occupancy.blocks[bkey]
            state = classify_states(blk["weight"], blk["distance"], self.w_min, self.d_occ)
            occ = np.nonzero(state == OCCUPIED)[0]
            if occ.size == 0:
                continue
            borigin = unpack_indices(np.array([bkey]))[0] * bs
            li = occ // (bs * bs)
            lj = (occ // bs) % bs
            lk = occ % bs
            keys.append(borigin[None, :] + np.stack([li, lj, lk], axis=1))
        if not keys:
            return np.empty((0, 3), dtype=np.int64)
        return np.concatenate(keys, axis=0)

    def free_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """World AABB of blocks containing at least one FREE voxel."""
        lo = None
        hi = None
        bs = self.block_side
        for bkey, blk in self.occupancy.blocks.items():
            state = classify_states(blk["weight"], blk["distance"], self.w_min, self.d_occ)
            if not np.any(state == FREE):
                continue
            borigin = unpack_indices(np.array([bkey]))[0] * bs
            a = borigin * self.voxel_size
            b = (borigin + bs) * self.voxel_size
            lo = a if lo is None else np.minimum(lo, a)
            hi = b if hi is None else np.maximum(hi, b)
        if lo is None:
            return None
        return lo, hi

    def is_path_free(self, a: np.ndarray, b: np.ndarray, robot_radius: float) -> bool:
        """True iff every voxel within robot_radius of segment a-b is FREE.

        Voxel membership uses center-to-segment distance with the boundary
        included (conservative); UNKNOWN blocks the path.
        """
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        vs = self.voxel_size
        lo = np.floor((np.minimum(a, b) - robot_radius) / vs).astype(np.int64) - 1
        hi = np.floor((np.maximum(a, b) + robot_radius) / vs).astype(np.int64) + 1
        ii, jj, kk = np.meshgrid(
            np.arange(lo[0], hi[0] + 1),
            np.arange(lo[1], hi[1] + 1),
            np.arange(lo[2], hi[2] + 1),
            indexing="ij",
        )
        idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
        centers = (idx + 0.5) * vs
        u = b - a
        len2 = float(u @ u)
        if len2 == 0.0:
            d = np.linalg.norm(centers - a, axis=1)
        else:
            t = np.clip((centers - a) @ u / len2, 0.0, 1.0)
            d = np.linalg.norm(centers - (a[None, :] + t[:, None] * u[None, :]), axis=1)
        near = idx[d <= robot_radius + 1e-9]
        if near.shape[0] == 0:
            return True
        return bool(np.all(self.states_at(near) == FREE))

    def build_snapshot(self, lo: np.ndarray, shape: tuple) -> DenseSnapshot:
        """Dense copy of the voxel region [lo, lo + shape)."""
        lo = np.asarray(lo, dtype=np.int64)
        shape = tuple(int(s) for s in shape)
        weight = np.zeros(shape, dtype=np.float64)
        dist = np.zeros(shape, dtype=np.float64)
        self.occupancy.fill_dense(lo, shape, "weight", weight)
        self.occupancy.fill_dense(lo, shape, "distance", dist)
        state = classify_states(weight, dist, self.w_min, self.d_occ)
        category = np.full(shape, BACKGROUND_ID, dtype=np.int32)
        ray_count = np.zeros(shape, dtype=np.int64)
        self.labelled.fill_dense(lo, shape, "category", category)
        self.labelled.fill_dense(lo, shape, "ray_count", ray_count)
        return DenseSnapshot(
            lo=lo,
            voxel_size=self.voxel_size,
            state=state,
            category=category,
            ray_count=ray_count,
            occ_weight=weight,
        )

    def planning_domain(self, pad_metres: float) -> tuple[np.ndarray, tuple]:
        """Voxel region covering all allocated blocks plus a margin.

        The margin should be at least the sensor range so every voxel a
        candidate view could score lies inside the region.
        """
        pad = int(math.ceil(pad_metres / self.voxel_size)) + 1
        bounds = []
        for layer in (self.occupancy, self.labelled):
            bb = layer.allocated_bounds()
            if bb is not None:
                bounds.append(bb)
        if not bounds:
            return np.array([-pad, -pad, -pad], dtype=np.int64), (2 * pad, 2 * pad, 2 * pad)
        lo = np.minimum.reduce([b[0] for b in bounds]) - pad
        hi = np.maximum.reduce([b[1] for b in bounds]) + pad
        return lo, tuple(int(x) for x in (hi - lo))

    # -- mutation ------------------------------------------------------------
    def mark_free_sphere(self, center: np.ndarray, radius: float, weight: float = 1.0):
        """Seed free-space evidence in a sphere (mission bootstrap).

        Merges d = +tau at the given weight into every voxel whose center
        lies within radius; goes through the normal TSDF merge path.
        """
        center = np.asarray(center, dtype=np.float64)
        vs = self.voxel_size
        r = int(math.ceil(radius / vs)) + 1
        c = np.floor(center / vs).astype(np.int64)
        rng = np.arange(-r, r + 1)
        ii, jj, kk = np.meshgrid(rng, rng, rng, indexing="ij")
        idx = c[None, :] + np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
        centers = (idx + 0.5) * vs
        inside = np.linalg.norm(centers - center, axis=1) <= radius
        idx = idx[inside]
        if idx.shape[0] == 0:
            return
        keys = np.unique(pack_indices(idx))
        w = np.full(len(keys), float(weight))
        self.occupancy.merge(keys, w, w * self.tau, self.weight_cap)
        self.revision += 1

    def integrate(
        self, pose: Pose, frame, camera: CameraModel
    ) -> IntegrationSummary:
        """Fuse one sensor frame into both layers.

        Every pixel ray is sampled from the origin to hit + tau (misses: to
        max_range) at half-voxel spacing; samples merge into the occupancy
        TSDF with weight min(1, 1/z^2).  Near-surface voxels (within tau of
        the hit along the ray) receive labelled-layer bookkeeping once per
        intersecting ray.
        """
        if frame.depth.shape != (camera.height, camera.width):
            raise DimensionMismatch(
                f"frame {frame.depth.shape} vs camera "
                f"{(camera.height, camera.width)}"
            )
        vs = self.voxel_size
        tau = self.tau
        dirs = generate_rays(camera, pose, step=1)
        n = dirs.shape[0]
        depth = frame.depth.ravel().astype(np.float64)
        finite = np.isfinite(depth)
        t_end = np.where(finite, depth + tau, camera.max_range)
        step = 0.5 * vs
        t_grid = (np.arange(int(math.ceil(t_end.max() / step))) + 0.5) * step
        valid = t_grid[None, :] < t_end[:, None]
        # Measurement weight: quadratic falloff of the measured depth; for
        # misses the free-space sample distance stands in.
        z_w = np.where(finite[:, None], depth[:, None], t_grid[None, :])
        w_samp = np.minimum(1.0, 1.0 / (z_w * z_w))
        with np.errstate(invalid="ignore"):
            sdf = np.clip(depth[:, None] - t_grid[None, :], -tau, tau)
        pts = pose.position[None, None, :] + dirs[:, None, :] * t_grid[None, :, None]
        vox = np.floor(pts / vs).astype(np.int64)

        vflat = vox[valid]
        wflat = w_samp[valid]
        dflat = sdf[valid]
        keys = pack_indices(vflat)
        uniq, inverse = np.unique(keys, return_inverse=True)
        sum_w = np.bincount(inverse, weights=wflat, minlength=len(uniq))
        sum_wd = np.bincount(inverse, weights=wflat * dflat, minlength=len(uniq))
        newly = self.occupancy.merge(uniq, sum_w, sum_wd, self.weight_cap)

        newly_labelled = self._update_labelled(frame, vox, valid, t_grid, depth, finite, n)
        self.revision += 1
        return IntegrationSummary(
            voxels_updated=len(uniq),
            newly_observed=newly,
            newly_labelled=newly_labelled,
        )

    def _update_labelled(self, frame, vox, valid, t_grid, depth, finite, n_rays):
        """Near-surface label bookkeeping; returns {category: newly labelled}."""
        near = valid & finite[:, None] & (
            np.abs(t_grid[None, :] - depth[:, None]) <= self.tau
        )
        if not np.any(near):
            return {}
        ray_ids = np.broadcast_to(
            np.arange(n_rays, dtype=np.int64)[:, None], near.shape
        )[near]
        vkeys = pack_indices(vox[near])
        # One count per (ray, voxel) pair: a ray intersecting a voxel several
        # sample steps still counts once.
        uvox, vinv = np.unique(vkeys, return_inverse=True)
        pair = vinv * n_rays + ray_ids
        upair = np.unique(pair)
        p_vox = upair // n_rays
        p_ray = upair % n_rays

        cats = frame.category.ravel()
        cat_ids = np.array(
            [self.category_id(str(c), create=True) for c in cats], dtype=np.int64
        )
        inst = frame.instance.ravel().astype(np.int64)

        nv = len(uvox)
        obs_inc = np.bincount(p_vox, minlength=nv)

        lab_sel = cat_ids[p_ray] != BACKGROUND_ID
        lv = p_vox[lab_sel]
        lc = cat_ids[p_ray[lab_sel]]
        li = inst[p_ray[lab_sel]]
        n_cat = len(self._cat_names)
        vote_key = lv * n_cat + lc
        uvote, vote_inv, vote_cnt = np.unique(
            vote_key, return_inverse=True, return_counts=True
        )
        vote_inst = np.full(len(uvote), np.iinfo(np.int64).max)
        np.minimum.at(vote_inst, vote_inv, li)

        cur_cat = self.labelled.gather(unpack_indices(uvox), "category").astype(np.int64)
        label_inc = np.zeros(nv, dtype=np.int64)
        new_cat = cur_cat.copy()
        new_inst = np.zeros(nv, dtype=np.int64)
        newly_labelled: dict = {}
        # Group votes per voxel; uvote is sorted so groups are contiguous.
        vote_vox = uvote // n_cat
        start = 0
        while start < len(uvote):
            stop = start
            v = vote_vox[start]
            while stop < len(uvote) and vote_vox[stop] == v:
                stop += 1
            cands_cat = uvote[start:stop] % n_cat
            cands_cnt = vote_cnt[start:stop]
            cands_inst = vote_inst[start:stop]
            if cur_cat[v] == BACKGROUND_ID:
                # Adopt the majority label; ties go to the lower category id.
                best = int(np.argmax(cands_cnt))
                new_cat[v] = cands_cat[best]
                new_inst[v] = cands_inst[best]
                label_inc[v] = cands_cnt[best]
                name = self._cat_names[int(cands_cat[best])]
                newly_labelled[name] = newly_labelled.get(name, 0) + 1
            else:
                match = np.nonzero(cands_cat == cur_cat[v])[0]
                if match.size:
                    label_inc[v] = cands_cnt[match[0]]
            start = stop

        idx = unpack_indices(uvox)
        bkeys, flat = self.labelled.split(idx)
        ub, binv = np.unique(bkeys, return_inverse=True)
        for bi, bkey in enumerate(ub):
            blk = self.labelled.ensure(int(bkey))
            sel = binv == bi
            loc = flat[sel]
            blk["observation_count"][loc] += obs_inc[sel]
            blk["ray_count"][loc] += obs_inc[sel]
            blk["label_count"][loc] += label_inc[sel]
            adopt = sel & (new_cat != cur_cat)
            if np.any(adopt):
                loc_a = flat[adopt]
                blk["category"][loc_a] = new_cat[adopt].astype(np.int32)
                blk["instance"][loc_a] = new_inst[adopt]
                for key, cid in zip(uvox[adopt], new_cat[adopt]):
                    self._cat_members.setdefault(int(cid), set()).add(int(key))
        return newly_labelled

    # -- export ----------------------------------------------------------------
    def dump_snapshot(self) -> str:
        """Line-based snapshot: `i j k state distance weight category confidence`.

        Covers every voxel of every allocated block (either layer), sorted
        by index.
        """
        keys = set()
        bs = self.block_side
        for layer in (self.occupancy, self.labelled):
            for bkey in layer.blocks:
                borigin = unpack_indices(np.array([bkey]))[0] * bs
                rng = np.arange(bs)
                ii, jj, kk = np.meshgrid(rng, rng, rng, indexing="ij")
                cells = borigin[None, :] + np.stack(
                    [ii.ravel(), jj.ravel(), kk.ravel()], axis=1
                )
                keys.update(map(int, pack_indices(cells)))
        ordered = np.array(sorted(keys), dtype=np.int64)
        if ordered.size == 0:
            return ""
        idx = unpack_indices(ordered)
        weight = self.occupancy.gather(idx, "weight")
        dist = self.occupancy.gather(idx, "distance")
        state = classify_states(weight, dist, self.w_min, self.d_occ)
        cat = self.labelled.gather(idx, "category")
        lab = self.labelled.gather(idx, "label_count")
        obs = self.labelled.gather(idx, "observation_count")
        lines = []
        for r in range(idx.shape[0]):
            conf = lab[r] / obs[r] if obs[r] > 0 else 0.0
            lines.append(
                f"{idx[r, 0]} {idx[r, 1]} {idx[r, 2]} {STATE_NAMES[state[r]]} "
                f"{float(dist[r])!r} {float(weight[r])!r} "
                f"{self._cat_names[int(cat[r])]} {float(conf)!r}"
            )
        return "\n".join(lines) + "\n"

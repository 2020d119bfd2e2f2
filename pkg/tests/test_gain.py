import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semnbv.gain import (
    BranchGain,
    EmptyBranch,
    GainContext,
    GainParams,
    TargetList,
    branch_gain,
    combine_terms,
    refine_factor,
    s_gain,
    update_target_list,
    v_gain,
    visible_voxels,
)
from semnbv.geometry import CameraModel, Pose, VoxelIndex, frustum_contains, voxel_center
from semnbv.mapping import FREE, OCCUPIED, UNKNOWN, LabelledVoxel, MapPair, pack_indices
from semnbv.scene import SensorFrame, load_scene, render

VS = 0.2


class Node:
    """Bare stand-in for a planner node: position plus yaw."""

    def __init__(self, position, yaw):
        self.position = np.asarray(position, dtype=np.float64)
        self.yaw = float(yaw)


def camera(w=32, h=24, rng=4.0):
    return CameraModel(
        horizontal_fov=math.radians(90.0),
        vertical_fov=math.radians(60.0),
        width=w,
        height=h,
        max_range=rng,
    )


def seed_states(maps, occupied=(), free=()):
    """Poke occupancy evidence directly: distance 0 or +tau at weight 1."""
    for cells, dist in ((occupied, 0.0), (free, maps.tau)):
        arr = np.array(sorted(set(map(tuple, cells))), dtype=np.int64)
        if arr.size == 0:
            continue
        keys = pack_indices(arr)
        order = np.argsort(keys)
        w = np.ones(len(keys))
        maps.occupancy.merge(keys[order], w, w * dist, maps.weight_cap)
    maps.revision += 1


# ---------------------------------------------------------------------------
# scalar gains


def test_refine_factor_extremes():
    params = GainParams(n_exp=10.0)
    v = LabelledVoxel(instance=1, category="person", label_count=5, observation_count=5, ray_count=10)
    assert refine_factor(v, params, 0.0) == pytest.approx(1.0)
    assert refine_factor(v, params, 1e12) == pytest.approx(0.0, abs=1e-9)


def test_refine_factor_worked_example():
    params = GainParams(n_exp=10.0)
    v = LabelledVoxel(instance=1, category="person", label_count=5, observation_count=5, ray_count=13)
    assert refine_factor(v, params, 1.0) == pytest.approx(0.125)


@given(
    st.integers(min_value=0, max_value=10**6),
    st.floats(min_value=0.0, max_value=1e9),
    st.floats(min_value=0.5, max_value=100.0),
)
def test_refine_factor_always_unit_interval(rays, w, n_exp):
    params = GainParams(n_exp=n_exp)
    v = LabelledVoxel(instance=1, category="x", label_count=1, observation_count=1, ray_count=rays)
    f = refine_factor(v, params, w)
    assert 0.0 <= f <= 1.0


def test_v_gain_by_state():
    maps = MapPair(voxel_size=VS)
    seed_states(maps, occupied=[(3, 3, 3)], free=[(1, 1, 1)])
    assert v_gain(maps, (9, 9, 9)) == 1.0  # untouched -> unknown
    assert v_gain(maps, (1, 1, 1)) == 0.0
    assert v_gain(maps, (3, 3, 3)) == 0.0


def test_s_gain_unknown_adjacent_to_target():
    maps = MapPair(voxel_size=VS)
    targets = TargetList(VS)
    targets.add((6, 5, 5))
    params = GainParams(lambda1=1.0, target_category="person")
    g = s_gain(maps, (5, 5, 5), targets, params)
    assert g == pytest.approx(math.exp(-0.2), rel=1e-9)


def test_s_gain_free_and_empty_list_are_zero():
    maps = MapPair(voxel_size=VS)
    seed_states(maps, free=[(1, 1, 1)])
    targets = TargetList(VS)
    params = GainParams(target_category="person")
    assert s_gain(maps, (1, 1, 1), targets, params) == 0.0  # free voxel
    # unknown voxel but nothing confirmed yet: exponential case vanishes
    assert s_gain(maps, (7, 7, 7), targets, params) == 0.0


def labelled_wall_map(category="person", x_face=2.0, cam=None, yaw=0.0, origin=(0.0, 0.0, 0.5)):
    scene = load_scene(
        "bounds -1 -2 -1  6 2 2\n"
        f"object {category} 1  {x_face} -2 -1  {x_face + 0.2} 2 2\n"
        f"target {category}\n"
    )
    cam = cam or camera()
    pose = Pose(position=np.asarray(origin, dtype=np.float64), yaw=yaw)
    maps = MapPair(voxel_size=VS)
    maps.integrate(pose, render(scene, pose, cam), cam)
    return maps


def test_s_gain_occupied_background_zero():
    maps = MapPair(voxel_size=VS)
    cam = CameraModel(
        horizontal_fov=math.radians(10.0),
        vertical_fov=math.radians(10.0),
        width=1,
        height=1,
        max_range=5.0,
    )
    frame = SensorFrame(
        depth=np.full((1, 1), 2.0),
        category=np.array([["background"]], dtype=object),
        instance=np.zeros((1, 1), dtype=np.int64),
    )
    maps.integrate(Pose(position=np.array([0.05, 0.05, 0.05]), yaw=0.0), frame, cam)
    vox = (10, 0, 0)
    assert maps.state_of(np.array(vox)) == OCCUPIED
    targets = TargetList(VS)
    targets.add((10, 1, 0))
    params = GainParams(target_category="person")
    assert s_gain(maps, vox, targets, params) == 0.0


def test_s_gain_occupied_target_uses_refinement():
    maps = labelled_wall_map("person")
    params = GainParams(target_category="person", eta_tgt=2.0, n_exp=10.0)
    targets = TargetList(VS)
    update_target_list(maps, targets, params)
    vox = np.array([10, 0, 2])
    assert maps.state_of(vox) == OCCUPIED
    lv = maps.labelled_voxel_at(vox)
    assert lv.category == "person"
    w = maps.occupancy_voxel_at(vox).weight
    want = params.eta_tgt * refine_factor(lv, params, w)
    assert s_gain(maps, vox, targets, params) == pytest.approx(want, rel=1e-12)
    assert 0.0 < want <= params.eta_tgt


def test_s_gain_occupied_nontarget_surround():
    maps = labelled_wall_map("chair")
    params = GainParams(lambda2=0.7, target_category="person")
    targets = TargetList(VS)
    targets.add((10, 0, 2))  # pretend one confirmed target voxel on the wall
    vox = np.array([10, 2, 2])
    assert maps.state_of(vox) == OCCUPIED
    assert maps.labelled_voxel_at(vox).category == "chair"
    d = targets.nearest_distance(voxel_center(vox, VS))
    assert s_gain(maps, vox, targets, params) == pytest.approx(
        math.exp(-0.7 * d), rel=1e-9
    )


def test_s_gain_piecewise_exclusive_and_bounded():
    maps = labelled_wall_map("person")
    params = GainParams(target_category="person")
    targets = TargetList(VS)
    update_target_list(maps, targets, params)
    rng = np.random.default_rng(7)
    cells = rng.integers(-2, 14, size=(300, 3))
    bound = max(1.0, params.eta_tgt)
    for cell in cells:
        g = s_gain(maps, cell, targets, params)
        assert 0.0 <= g <= bound
        state = maps.state_of(cell)
        cat = maps.labelled_voxel_at(cell).category
        cases = [
            state == UNKNOWN,
            state == OCCUPIED and cat == "person",
            state == OCCUPIED and cat not in ("person", "background"),
        ]
        if not any(cases):
            assert g == 0.0
        assert sum(cases) <= 1


def test_s_gain_monotone_in_distance():
    maps = MapPair(voxel_size=VS)
    targets = TargetList(VS)
    targets.add((0, 0, 0))
    params = GainParams(lambda1=0.5, target_category="person")
    gains = [s_gain(maps, (i, 0, 0), targets, params) for i in range(1, 6)]
    assert all(a > b for a, b in zip(gains, gains[1:]))


def test_nearest_distance_small_and_indexed_paths_agree():
    rng = np.random.default_rng(3)
    cells = rng.integers(-40, 40, size=(2600, 3))
    cells = np.unique(cells, axis=0)
    assert len(cells) > 2000
    big = TargetList(VS)
    big.add_packed(pack_indices(cells))
    centers = (cells + 0.5) * VS
    for q in rng.uniform(-8, 8, size=(25, 3)):
        brute = float(np.min(np.linalg.norm(centers - q[None, :], axis=1)))
        assert big.nearest_distance(q) == pytest.approx(brute, rel=1e-12)
    small = TargetList(VS)
    small.add((0, 0, 0))
    assert small.nearest_distance(np.array([0.1, 0.1, 0.1])) == pytest.approx(0.0)
    assert small.nearest_distance(np.array([0.1, 0.1, 0.3])) == pytest.approx(0.2)


# ---------------------------------------------------------------------------
# visibility: independent per-voxel oracle


def los_clear_oracle(state, lo, origin, target_idx, vs):
    """Plane-crossing line-of-sight check (interval midpoints).

    Enumerates the positive-measure cells the segment crosses by slicing
    the parameter range at every grid-plane crossing, deliberately a
    different construction from the incremental traversal under test.
    """
    p = np.asarray(origin, dtype=np.float64) / vs
    c = np.asarray(target_idx, dtype=np.float64) + 0.5
    d = c - p
    ts = [0.0, 1.0]
    for a in range(3):
        if d[a] != 0.0:
            lo_a, hi_a = sorted((p[a], c[a]))
            for b in range(math.ceil(lo_a), math.floor(hi_a) + 1):
                t = (b - p[a]) / d[a]
                if 0.0 < t < 1.0:
                    ts.append(t)
    ts = sorted(set(ts))
    shape = np.array(state.shape)
    tgt = np.asarray(target_idx)
    for ta, tb in zip(ts, ts[1:]):
        if tb <= ta:
            continue
        cell = np.floor(p + 0.5 * (ta + tb) * d).astype(np.int64)
        if (cell == tgt).all():
            continue
        rel = cell - lo
        if (rel >= 0).all() and (rel < shape).all() and state[rel[0], rel[1], rel[2]] == OCCUPIED:
            return False
    return True


def visible_oracle(maps, pose, cam):
    vs = maps.voxel_size
    r_cells = int(math.ceil(cam.max_range / vs)) + 1
    c0 = np.floor(pose.position / vs).astype(np.int64)
    lo = c0 - r_cells
    side = 2 * r_cells + 1
    snap = maps.build_snapshot(lo, (side, side, side))
    out = []
    for a in range(side):
        for b in range(side):
            for c in range(side):
                idx = (int(lo[0]) + a, int(lo[1]) + b, int(lo[2]) + c)
                center = (np.array(idx) + 0.5) * vs
                if not frustum_contains(cam, pose, center):
                    continue
                if los_clear_oracle(snap.state, lo, pose.position, idx, vs):
                    out.append(VoxelIndex(*idx))
    return out


def test_visible_voxels_all_unknown_is_whole_frustum():
    maps = MapPair(voxel_size=VS)
    cam = camera(rng=2.0)
    pose = Pose(position=np.array([0.13, -0.21, 0.47]), yaw=0.83)
    got = visible_voxels(maps, pose, cam)
    want = [
        v
        for v in visible_oracle(maps, pose, cam)
    ]
    assert got == want
    # spot-check: every frustum voxel present, none missing
    assert len(got) > 100
    for v in got:
        assert frustum_contains(cam, pose, (np.array(v) + 0.5) * VS)


def test_visible_voxels_wall_occludes():
    maps = labelled_wall_map("person")
    cam = camera(rng=4.0)
    pose = Pose(position=np.array([0.0, 0.0, 0.5]), yaw=0.0)
    got = visible_voxels(maps, pose, cam)
    got_set = set(got)
    # the first occupied voxel along the axis (the mapped wall face) is
    # visible and occludes everything behind it
    assert VoxelIndex(9, 0, 2) in got_set
    for i in range(10, 20):
        assert VoxelIndex(i, 0, 2) not in got_set
    assert got == sorted(got_set)
    assert len(got) == len(got_set)


@settings(max_examples=5, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_visible_voxels_matches_oracle_on_mixed_maps(seed):
    rng = np.random.default_rng(seed)
    maps = MapPair(voxel_size=VS)
    u = rng.random((16, 16, 16))
    occ = np.argwhere(u < 0.12)
    fre = np.argwhere(u > 0.55)
    seed_states(maps, occupied=occ, free=fre)
    cam = camera(w=16, h=12, rng=2.2)
    pose = Pose(
        position=np.array([1.6, 1.6, 1.6]) + rng.uniform(-0.37, 0.37, 3),
        yaw=rng.uniform(-math.pi, math.pi),
    )
    assert visible_voxels(maps, pose, cam) == visible_oracle(maps, pose, cam)


# ---------------------------------------------------------------------------
# branch gain


def two_wall_map(cam):
    scene = load_scene(
        "bounds -1.2 -1.2 -0.2  2.4 2.4 2.2\n"
        "object person 1  1.6 -0.4 0.2  1.8 0.4 1.4\n"
        "object chair 2  -0.2 1.6 0.0  0.6 1.8 0.8\n"
        "target person\n"
    )
    maps = MapPair(voxel_size=VS)
    for yaw in (0.0, math.pi / 2):
        pose = Pose(position=np.array([0.1, 0.1, 0.7]), yaw=yaw)
        maps.integrate(pose, render(scene, pose, cam), cam)
    return maps


def branch_gain_oracle(maps, branch, targets, params, cam):
    vis = s_unk = s_ref = s_sur = 0.0
    cum = 0.0
    for node, elen in branch:
        cum += elen
        if cum <= 0.0:
            continue
        pose = Pose(position=node.position, yaw=node.yaw)
        f_o = 1.0 / (params.lambda_o * cum)
        f_l = 1.0 / (params.lambda_l * cum)
        for vox in visible_oracle(maps, pose, cam):
            idx = np.array(vox)
            vis += v_gain(maps, idx) * f_o
            g = s_gain(maps, idx, targets, params) * f_l
            state = maps.state_of(idx)
            if state == UNKNOWN:
                s_unk += g
            elif state == OCCUPIED:
                cat = maps.labelled_voxel_at(idx).category
                if cat == params.target_category:
                    s_ref += g
                elif cat != "background":
                    s_sur += g
    k = 1.0 if params.k_mode else 0.0
    return BranchGain(vis, s_unk, s_ref, s_sur, k * vis + (1 - k) * (s_unk + s_ref + s_sur))


@pytest.mark.parametrize("k_mode", [True, False])
def test_branch_gain_matches_end_to_end_oracle(k_mode):
    cam = camera(w=24, h=18, rng=2.0)
    maps = two_wall_map(cam)
    params = GainParams(target_category="person", k_mode=k_mode)
    targets = TargetList(VS)
    update_target_list(maps, targets, params)
    assert len(targets) > 0
    branch = [
        (Node([0.1, 0.1, 0.7], 0.0), 0.0),
        (Node([0.5, 0.3, 0.7], 0.4), math.hypot(0.4, 0.2)),
        (Node([0.9, 0.2, 0.7], -0.2), math.hypot(0.4, 0.1)),
    ]
    got = branch_gain(maps, branch, targets, params, cam)
    want = branch_gain_oracle(maps, branch, targets, params, cam)
    assert got.visibility == pytest.approx(want.visibility, rel=1e-9, abs=1e-12)
    assert got.s_unknown == pytest.approx(want.s_unknown, rel=1e-9, abs=1e-12)
    assert got.s_refine == pytest.approx(want.s_refine, rel=1e-9, abs=1e-12)
    assert got.s_surround == pytest.approx(want.s_surround, rel=1e-9, abs=1e-12)
    assert got.combined == pytest.approx(want.combined, rel=1e-9, abs=1e-12)


def test_branch_gain_empty_branch_raises():
    maps = MapPair(voxel_size=VS)
    with pytest.raises(EmptyBranch):
        branch_gain(maps, [], TargetList(VS), GainParams(), camera())


def test_branch_gain_root_only_is_zero():
    maps = MapPair(voxel_size=VS)
    maps.mark_free_sphere(np.array([0.5, 0.5, 0.5]), 1.0)
    bg = branch_gain(
        maps,
        [(Node([0.5, 0.5, 0.5], 0.0), 0.0)],
        TargetList(VS),
        GainParams(k_mode=True),
        camera(rng=1.5),
    )
    assert bg == BranchGain(0.0, 0.0, 0.0, 0.0, 0.0)


def test_combined_recomputable_from_parts():
    terms = [((12.0, 0.4, 1.1, 0.2), 0.7), ((5.0, 0.9, 0.0, 0.6), 1.9)]
    for k_mode in (True, False):
        params = GainParams(k_mode=k_mode, lambda_o=1.3, lambda_l=0.8)
        bg = combine_terms(terms, params)
        k = 1.0 if k_mode else 0.0
        recomputed = k * bg.visibility + (1 - k) * (bg.s_unknown + bg.s_refine + bg.s_surround)
        assert bg.combined == pytest.approx(recomputed, abs=1e-9)


def test_mode_structure_of_combined():
    terms = [((12.0, 0.4, 1.1, 0.2), 0.7), ((5.0, 0.9, 0.0, 0.6), 1.9)]
    vis_only = combine_terms(terms, GainParams(k_mode=True))
    sem_only = combine_terms(terms, GainParams(k_mode=False))
    assert vis_only.combined == pytest.approx(vis_only.visibility)
    assert sem_only.combined == pytest.approx(sem_only.semantic)
    # parts identical across modes; only the combination differs
    assert vis_only.visibility == sem_only.visibility
    assert vis_only.s_unknown == sem_only.s_unknown


@given(st.floats(min_value=0.1, max_value=10.0))
def test_edge_scaling_rescales_combined_and_keeps_argmax(c):
    params = GainParams(k_mode=True)
    branches = [
        [((10.0, 0.0, 0.0, 0.0), 0.5), ((4.0, 0.0, 0.0, 0.0), 1.0)],
        [((3.0, 0.0, 0.0, 0.0), 0.4)],
        [((8.0, 0.0, 0.0, 0.0), 2.0)],
    ]
    base = [combine_terms(b, params).combined for b in branches]
    scaled = [
        combine_terms([(t, d * c) for t, d in b], params).combined for b in branches
    ]
    for g0, g1 in zip(base, scaled):
        assert g1 == pytest.approx(g0 / c, rel=1e-12)
    assert int(np.argmax(base)) == int(np.argmax(scaled))


# ---------------------------------------------------------------------------
# target list maintenance


def test_update_target_list_counts_match_map_dump():
    maps = labelled_wall_map("person")
    params = GainParams(target_category="person", conf_min=0.5)
    targets = TargetList(VS)
    added = update_target_list(maps, targets, params)
    want = set()
    for line in maps.dump_snapshot().strip().splitlines():
        parts = line.split()
        if parts[3] == "OCCUPIED" and parts[6] == "person" and float(parts[7]) >= 0.5:
            want.add(VoxelIndex(int(parts[0]), int(parts[1]), int(parts[2])))
    assert added == len(want)
    assert set(targets.voxels) == want
    assert added > 0


def test_update_target_list_idempotent_and_rebuildable():
    maps = labelled_wall_map("person")
    params = GainParams(target_category="person")
    targets = TargetList(VS)
    first = update_target_list(maps, targets, params)
    assert update_target_list(maps, targets, params) == 0
    assert len(targets) == first
    # after a clear the same confirmed voxels are found again
    targets.clear()
    assert len(targets) == 0
    assert update_target_list(maps, targets, params) == first


def test_update_target_list_unknown_category_is_empty():
    maps = labelled_wall_map("person")
    targets = TargetList(VS)
    assert update_target_list(maps, targets, GainParams(target_category="dog")) == 0
    assert update_target_list(maps, targets, GainParams(target_category="")) == 0


def test_update_target_list_requires_occupied():
    maps = labelled_wall_map("person")
    params = GainParams(target_category="person")
    targets = TargetList(VS)
    update_target_list(maps, targets, params)
    for vox in targets.voxels:
        assert maps.state_of(np.array(vox)) == OCCUPIED


def test_gain_context_terms_match_scalar_sums():
    cam = camera(w=24, h=18, rng=2.0)
    maps = two_wall_map(cam)
    params = GainParams(target_category="person")
    targets = TargetList(VS)
    update_target_list(maps, targets, params)
    ctx = GainContext(maps, targets, params, cam)
    pose = Pose(position=np.array([0.52, 0.11, 0.68]), yaw=0.9)
    v, su, sr, ss = ctx.node_terms(pose.position, pose.yaw)
    ev = esu = esr = ess = 0.0
    for vox in visible_oracle(maps, pose, cam):
        idx = np.array(vox)
        ev += v_gain(maps, idx)
        g = s_gain(maps, idx, targets, params)
        state = maps.state_of(idx)
        if state == UNKNOWN:
            esu += g
        elif state == OCCUPIED:
            cat = maps.labelled_voxel_at(idx).category
            if cat == "person":
                esr += g
            elif cat != "background":
                ess += g
    assert v == pytest.approx(ev, rel=1e-9, abs=1e-12)
    assert su == pytest.approx(esu, rel=1e-9, abs=1e-12)
    assert sr == pytest.approx(esr, rel=1e-9, abs=1e-12)
    assert ss == pytest.approx(ess, rel=1e-9, abs=1e-12)

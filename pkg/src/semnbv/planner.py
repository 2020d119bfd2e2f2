"""Receding-horizon view planning over observed free space.

A rapidly-exploring random tree with rewiring is grown from the current
pose each round, every node gets the yaw that maximizes its single-view
gain, and the first edge of the best-scoring root-to-leaf branch becomes
the next waypoint.  A small mode machine alternates between wide-area
search (visibility scoring) and target acquisition (semantic scoring),
advancing through an ordered roster of target categories.  A
visibility-only variant with an exponential distance discount serves as
the comparison baseline.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .gain import BranchGain, GainContext, GainParams, TargetList, combine_terms, update_target_list
from .geometry import CameraModel, Pose, voxel_of
from .mapping import FREE


class NoFreeSpace(RuntimeError):
    """Tree growth was requested from a pose outside observed free space."""


class Finished(RuntimeError):
    """The target roster is exhausted; no further planning rounds exist."""


@dataclass
class PlannerConfig:
    """Tree growth parameters.

    extension_radius bounds the steering step, rewire_radius bounds the
    neighborhood considered for parent improvement, robot_radius inflates
    edge collision checks.
    """

    max_nodes: int = 40
    extension_radius: float = 1.0
    rewire_radius: float = 1.5
    yaw_samples: int = 6
    robot_radius: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_nodes < 1:
            raise ValueError(f"max_nodes must be positive: {self.max_nodes}")
        if self.extension_radius <= 0 or self.rewire_radius <= 0:
            raise ValueError("extension_radius and rewire_radius must be positive")
        if self.rewire_radius < self.extension_radius:
            raise ValueError(
                f"rewire_radius {self.rewire_radius} < extension_radius {self.extension_radius}"
            )
        if self.yaw_samples < 1:
            raise ValueError(f"yaw_samples must be positive: {self.yaw_samples}")
        if self.robot_radius <= 0:
            raise ValueError(f"robot_radius must be positive: {self.robot_radius}")


@dataclass(eq=False)
class ViewNode:
    """One candidate viewpoint in the tree.  Node identity is object identity."""

    pose: Pose
    parent: "ViewNode | None"
    edge_length: float
    cumulative_length: float
    children: list = field(default_factory=list)
    index: int = 0
    terms: tuple | None = None

    @property
    def position(self) -> np.ndarray:
        return self.pose.position

    @property
    def yaw(self) -> float:
        return self.pose.yaw


@dataclass
class PlannerTree:
    """Nodes in insertion order; nodes[0] is the root."""

    nodes: list

    @property
    def root(self) -> ViewNode:
        return self.nodes[0]

    def leaves(self) -> list:
        out = [n for n in self.nodes if not n.children]
        return out if out else [self.nodes[0]]


@dataclass
class PlannerState:
    """Mode machine state for the adaptive search/acquisition strategy.

    mode_k True scores branches by visibility (search), False by the
    semantic terms (acquisition).  target_index is 1-based into roster;
    last_semantic holds the previously selected branch's discounted
    semantic sums, which drive the dominance test one round later.
    """

    roster: tuple
    mode_k: bool = True
    target_index: int = 1
    dominance_count: int = 0
    c_thre: int = 3
    dominance_ratio: float = 10.0
    finished: bool = False
    last_semantic: tuple | None = None

    def __post_init__(self):
        self.roster = tuple(self.roster)
        if not self.roster:
            raise ValueError("target roster must not be empty")
        if self.c_thre < 1:
            raise ValueError(f"c_thre must be a positive integer: {self.c_thre}")
        if self.dominance_ratio <= 0:
            raise ValueError(f"dominance_ratio must be positive: {self.dominance_ratio}")

    @property
    def current_category(self) -> str:
        if self.target_index > len(self.roster):
            return ""
        return self.roster[self.target_index - 1]


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-round planner readout, one row of the round log.

    branch_trace holds one (branch_id, n_nodes, BranchGain) triple per
    evaluated root-to-leaf branch, in evaluation order.
    """

    mode_k: bool
    target_index: int
    dominance_count: int
    n_tree_nodes: int
    list_size: int
    list_growth: int
    gain: BranchGain
    waypoint: Pose
    finished: bool
    fallback: bool
    branch_trace: list = field(default_factory=list)


def _collision_free(maps, cache: dict, nodes: list, i: int, j: int, radius: float) -> bool:
    key = (i, j) if i < j else (j, i)
    hit = cache.get(key)
    if hit is None:
        hit = maps.is_path_free(nodes[i].position, nodes[j].position, radius)
        cache[key] = hit
    return hit


def _propagate_lengths(node: ViewNode):
    stack = [node]
    while stack:
        cur = stack.pop()
        for child in cur.children:
            child.cumulative_length = cur.cumulative_length + child.edge_length
            stack.append(child)


def _subtree(node: ViewNode) -> list:
    out = []
    stack = [node]
    while stack:
        cur = stack.pop()
        out.append(cur)
        stack.extend(cur.children)
    return out


def _best_yaw(context: GainContext, position: np.ndarray, yaws: np.ndarray) -> tuple:
    """Greedy yaw for one node: argmax single-view gain under the mode."""
    best_score = -1.0
    best_yaw = float(yaws[0])
    best_terms = None
    for yaw in yaws:
        terms = context.node_terms(position, float(yaw))
        if context.params.k_mode:
            score = terms[0]
        else:
            score = terms[1] + terms[2] + terms[3]
        if score > best_score:
            best_score = score
            best_yaw = float(yaw)
            best_terms = terms
    return best_yaw, best_terms


def grow_tree(maps, root: Pose, config: PlannerConfig, context: GainContext) -> PlannerTree:
    """Grow a rewired random tree of viewpoints through observed free space.

    Positions are sampled uniformly in the bounding box of currently-FREE
    blocks inflated by extension_radius, steered toward from the nearest
    node, and kept only when the whole swept edge stays in FREE space.
    Rewiring minimizes cumulative root distance within rewire_radius and
    cascades until no in-radius parent swap improves any node, so the
    finished tree is locally shortest-path.  Deterministic given the seed.
    """
    vs = maps.voxel_size
    if maps.state_of(voxel_of(root.position, vs)) != FREE:
        raise NoFreeSpace(f"root position {root.position} is not in observed free space")
    bounds = maps.free_bounds()
    if bounds is None:
        raise NoFreeSpace("map contains no free space")
    lo = bounds[0] - config.extension_radius
    hi = bounds[1] + config.extension_radius

    rng = np.random.default_rng(config.rng_seed)
    yaws = -math.pi + 2.0 * math.pi * np.arange(config.yaw_samples) / config.yaw_samples

    root_node = ViewNode(pose=root, parent=None, edge_length=0.0, cumulative_length=0.0, index=0)
    nodes = [root_node]
    positions = np.empty((config.max_nodes, 3), dtype=np.float64)
    positions[0] = root.position
    cache: dict = {}
    rewire_queue: deque = deque()

    attempts = 0
    budget = 30 * config.max_nodes
    while len(nodes) < config.max_nodes and attempts < budget:
        attempts += 1
        sample = rng.uniform(lo, hi)
        n = len(nodes)
        d2 = np.sum((positions[:n] - sample) ** 2, axis=1)
        nearest = int(np.argmin(d2))
        vec = sample - positions[nearest]
        dist = float(np.linalg.norm(vec))
        if dist < 1e-9:
            continue
        if dist > config.extension_radius:
            new_pos = positions[nearest] + vec * (config.extension_radius / dist)
        else:
            new_pos = sample
        if maps.state_of(voxel_of(new_pos, vs)) != FREE:
            continue
        if not maps.is_path_free(positions[nearest], new_pos, config.robot_radius):
            continue

        dists = np.sqrt(np.sum((positions[:n] - new_pos) ** 2, axis=1))
        near_ids = np.flatnonzero(dists <= config.rewire_radius)
        if np.any(dists < 1e-9):
            continue

        new_index = n
        positions[new_index] = new_pos
        node = ViewNode(
            pose=Pose(position=new_pos, yaw=0.0),
            parent=None,
            edge_length=0.0,
            cumulative_length=0.0,
            index=new_index,
        )
        nodes.append(node)

        best_parent = nearest
        best_cost = nodes[nearest].cumulative_length + float(dists[nearest])
        for j in near_ids:
            j = int(j)
            if j == nearest:
                continue
            cost = nodes[j].cumulative_length + float(dists[j])
            if cost < best_cost and _collision_free(maps, cache, nodes, j, new_index, config.robot_radius):
                best_parent = j
                best_cost = cost
        parent = nodes[best_parent]
        node.parent = parent
        node.edge_length = float(dists[best_parent])
        node.cumulative_length = parent.cumulative_length + node.edge_length
        parent.children.append(node)

        yaw, terms = _best_yaw(context, new_pos, yaws)
        node.pose = Pose(position=new_pos, yaw=yaw)
        node.terms = terms

        rewire_queue.append(new_index)
        while rewire_queue:
            q = rewire_queue.popleft()
            qnode = nodes[q]
            m = len(nodes)
            qd = np.sqrt(np.sum((positions[:m] - positions[q]) ** 2, axis=1))
            for j in np.flatnonzero(qd <= config.rewire_radius):
                j = int(j)
                if j == q or j == 0:
                    continue
                other = nodes[j]
                if other is qnode.parent or _is_ancestor(other, of=qnode):
                    continue
                alt = qnode.cumulative_length + float(qd[j])
                if alt < other.cumulative_length and _collision_free(
                    maps, cache, nodes, q, j, config.robot_radius
                ):
                    other.parent.children.remove(other)
                    other.parent = qnode
                    other.edge_length = float(qd[j])
                    other.cumulative_length = alt
                    qnode.children.append(other)
                    _propagate_lengths(other)
                    for moved in _subtree(other):
                        rewire_queue.append(moved.index)

    return PlannerTree(nodes=nodes)


def _is_ancestor(candidate: ViewNode, of: ViewNode) -> bool:
    """True iff candidate lies on the root path of node ``of``."""
    cur = of
    while cur is not None:
        if cur is candidate:
            return True
        cur = cur.parent
    return False


def _branch_to_root(leaf: ViewNode) -> list:
    path = []
    cur = leaf
    while cur is not None:
        path.append(cur)
        cur = cur.parent
    path.reverse()
    return path


def _score_leaf(leaf: ViewNode, params: GainParams) -> BranchGain:
    path = _branch_to_root(leaf)
    terms = [
        (n.terms, n.cumulative_length)
        for n in path[1:]
        if n.cumulative_length > 0.0
    ]
    return combine_terms(terms, params)


def select_best_branch(
    tree: PlannerTree,
    maps,
    targets: TargetList,
    params: GainParams,
    camera: CameraModel,
    workers: int = 0,
    trace: list | None = None,
) -> tuple:
    """Pick the root-to-leaf branch with the highest combined gain.

    Ties go to the shorter branch, then to the earlier leaf in insertion
    order.  Nodes grown in this module carry cached per-view terms; for a
    foreign tree the terms are evaluated once against a fresh context.
    Scoring individual branches is pure, so with workers > 1 the branches
    are evaluated on a thread pool; the reduction order is fixed, and the
    result is identical to sequential evaluation.  When trace is a list it
    receives one (branch_id, n_nodes, BranchGain) triple per branch.
    """
    leaves = tree.leaves()
    missing = [n for n in tree.nodes if n.terms is None and n.parent is not None]
    if missing:
        context = GainContext(maps, targets, params, camera)
        for n in missing:
            n.terms = context.node_terms(n.position, n.yaw)

    if workers > 1 and len(leaves) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            gains = list(pool.map(lambda leaf: _score_leaf(leaf, params), leaves))
    else:
        gains = [_score_leaf(leaf, params) for leaf in leaves]

    if trace is not None:
        for i, (leaf, gain) in enumerate(zip(leaves, gains)):
            trace.append((i, len(_branch_to_root(leaf)), gain))

    best = 0
    for i in range(1, len(leaves)):
        g, b = gains[i], gains[best]
        if g.combined > b.combined:
            best = i
        elif g.combined == b.combined and leaves[i].cumulative_length < leaves[best].cumulative_length:
            best = i
    return _branch_to_root(leaves[best]), gains[best]


def advance_mode(state: PlannerState, targets: TargetList, params: GainParams, list_growth: int):
    """Apply the per-round mode transition rules.

    List growth forces acquisition mode and breaks any dominance streak.
    Otherwise, with a nonempty list, the previous round's branch feeds the
    dominance test: surround gain exceeding dominance_ratio times the
    unknown-plus-refine gain extends the streak, anything else resets it,
    and all-zero rounds are ignored.  A full streak of c_thre switches
    back to search mode, clears the list, and advances the roster; an
    exhausted roster marks the state finished.
    """
    if list_growth > 0:
        state.mode_k = False
        state.dominance_count = 0
    elif len(targets) > 0 and state.last_semantic is not None:
        su, sr, ss = state.last_semantic
        if su + sr + ss > 0.0:
            if ss > state.dominance_ratio * (su + sr):
                state.dominance_count += 1
            else:
                state.dominance_count = 0
            if state.dominance_count >= state.c_thre:
                state.mode_k = True
                state.dominance_count = 0
                state.last_semantic = None
                targets.clear()
                state.target_index += 1
                if state.target_index > len(state.roster):
                    state.finished = True
    params.k_mode = state.mode_k
    params.target_category = state.current_category


def step(
    state: PlannerState,
    maps,
    targets: TargetList,
    params: GainParams,
    current: Pose,
    config: PlannerConfig,
    camera: CameraModel,
    workers: int = 0,
) -> tuple:
    """One planning round: maintain the list, update the mode, grow, select.

    Returns the first node beyond the root of the best branch as the next
    waypoint, plus diagnostics.  When every branch scores zero the longest
    branch's first edge is returned instead, so the platform keeps moving.
    Raises Finished when called after the roster is exhausted.
    """
    if state.finished:
        raise Finished(f"all {len(state.roster)} targets acquired")
    params.k_mode = state.mode_k
    params.target_category = state.current_category

    added = update_target_list(maps, targets, params)
    advance_mode(state, targets, params, added)

    context = GainContext(maps, targets, params, camera)
    tree = grow_tree(maps, current, config, context)
    trace: list = []
    branch, gain = select_best_branch(tree, maps, targets, params, camera, workers=workers, trace=trace)
    state.last_semantic = (gain.s_unknown, gain.s_refine, gain.s_surround)

    fallback = False
    if gain.combined == 0.0 and len(tree.nodes) > 1:
        fallback = True
        leaves = tree.leaves()
        longest = 0
        for i in range(1, len(leaves)):
            if leaves[i].cumulative_length > leaves[longest].cumulative_length:
                longest = i
        branch = _branch_to_root(leaves[longest])

    waypoint = branch[1].pose if len(branch) > 1 else tree.root.pose
    diag = StepDiagnostics(
        mode_k=state.mode_k,
        target_index=state.target_index,
        dominance_count=state.dominance_count,
        n_tree_nodes=len(tree.nodes),
        list_size=len(targets),
        list_growth=added,
        gain=gain,
        waypoint=waypoint,
        finished=state.finished,
        fallback=fallback,
        branch_trace=trace,
    )
    return waypoint, diag


def exp_discounted_visibility(leaf: ViewNode, lambda_exp: float) -> float:
    """Visible-voxel sum over a branch, discounted by exp(-lambda * distance)."""
    total = 0.0
    for n in _branch_to_root(leaf)[1:]:
        if n.cumulative_length <= 0.0:
            continue
        total += n.terms[0] * math.exp(-lambda_exp * n.cumulative_length)
    return total


def _baseline_round(
    maps,
    current: Pose,
    config: PlannerConfig,
    camera: CameraModel,
    lambda_exp: float,
    workers: int = 0,
):
    targets = TargetList(maps.voxel_size)
    params = GainParams(k_mode=True)
    context = GainContext(maps, targets, params, camera)
    tree = grow_tree(maps, current, config, context)

    leaves = tree.leaves()
    if workers > 1 and len(leaves) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(lambda leaf: exp_discounted_visibility(leaf, lambda_exp), leaves))
    else:
        scores = [exp_discounted_visibility(leaf, lambda_exp) for leaf in leaves]
    best = 0
    for i in range(1, len(leaves)):
        if scores[i] > scores[best]:
            best = i
        elif scores[i] == scores[best] and leaves[i].cumulative_length < leaves[best].cumulative_length:
            best = i

    fallback = False
    if scores[best] == 0.0 and len(tree.nodes) > 1:
        fallback = True
        best = 0
        for i in range(1, len(leaves)):
            if leaves[i].cumulative_length > leaves[best].cumulative_length:
                best = i
    branch = _branch_to_root(leaves[best])
    waypoint = branch[1].pose if len(branch) > 1 else tree.root.pose

    def as_gain(score):
        return BranchGain(visibility=score, s_unknown=0.0, s_refine=0.0,
                          s_surround=0.0, combined=score)

    trace = [(i, len(_branch_to_root(leaf)), as_gain(scores[i]))
             for i, leaf in enumerate(leaves)]
    diag = StepDiagnostics(
        mode_k=True,
        target_index=1,
        dominance_count=0,
        n_tree_nodes=len(tree.nodes),
        list_size=0,
        list_growth=0,
        gain=as_gain(scores[best]),
        waypoint=waypoint,
        finished=False,
        fallback=fallback,
        branch_trace=trace,
    )
    return waypoint, diag


def baseline_rh_nbv_step(
    maps,
    current: Pose,
    config: PlannerConfig,
    camera: CameraModel,
    lambda_exp: float,
) -> Pose:
    """Visibility-only receding-horizon round.

    Same tree machinery as step, but branch gain is the sum over branch
    nodes of visible-voxel count times exp(-lambda_exp * root distance).
    No labels, no target list, no mode machine.
    """
    return _baseline_round(maps, current, config, camera, lambda_exp)[0]

"""Local-horizon RRT* over the voxel map and the path-reference machinery.

The tree grows only inside a sphere of radius h_plan around the start (the
vehicle's planning horizon); a goal beyond the horizon is clipped onto the
sphere. Node cost is parent cost plus Euclidean linking cost. Sampling is
planar at the start altitude by default, matching constant-height flights;
set planar=False for full 3D growth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .voxelmap import VoxelMap, segment_point_distances


@dataclass(frozen=True)
class PlannerParams:
    h_plan: float = 3.0          # planning horizon radius (m)
    step_size: float = 0.3       # max edge extension (m)
    goal_bias: float = 0.1       # probability of sampling the clipped goal
    rewire_radius: float = 0.6   # neighborhood for parent choice / rewiring (m)
    max_iterations: int = 5000
    clearance: float = 0.35      # min distance of edges to voxel centers (m)
    rng_seed: int = 0
    planar: bool = True          # sample at the start altitude only

    def __post_init__(self):
        if not (0.0 <= self.goal_bias <= 1.0):
            raise ValueError("goal_bias must be in [0, 1]")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be > 0")
        if self.h_plan <= 0 or self.rewire_radius <= 0 or self.clearance < 0:
            raise ValueError("h_plan, rewire_radius must be > 0 and clearance >= 0")


class PlannerPath:
    """Ordered setpoints with cumulative costs and the active segment index.

    Segment i (1-based) joins setpoints[i-1] and setpoints[i]; a single-point
    path has no segment and active_segment == 0.
    """

    def __init__(self, setpoints, costs=None, active_segment: int | None = None):
        sp = np.asarray(setpoints, dtype=float).reshape(-1, 3)
        if sp.shape[0] < 1:
            raise ValueError("path needs at least one setpoint")
        seg = np.linalg.norm(np.diff(sp, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError("consecutive setpoints must be distinct")
        if costs is None:
            costs = np.concatenate(([0.0], np.cumsum(seg)))
        costs = np.asarray(costs, dtype=float).reshape(-1)
        if costs.shape[0] != sp.shape[0]:
            raise ValueError("one cost per setpoint required")
        if np.any(np.diff(costs) <= 0):
            raise ValueError("costs must be strictly increasing along the path")
        self.setpoints = sp
        self.costs = costs
        if active_segment is None:
            active_segment = 1 if sp.shape[0] > 1 else 0
        self.active_segment = int(active_segment)

    @property
    def n_segments(self) -> int:
        return self.setpoints.shape[0] - 1

    def segment_direction(self, i: int | None = None) -> np.ndarray:
        """Unit direction of segment i (defaults to the active segment)."""
        i = self.active_segment if i is None else i
        if not (1 <= i <= self.n_segments):
            raise ValueError(f"no segment {i} in a path of {self.n_segments} segments")
        d = self.setpoints[i] - self.setpoints[i - 1]
        return d / np.linalg.norm(d)

    def total_cost(self) -> float:
        return float(self.costs[-1])


def node_cost(c_p: float, c_l: float) -> float:
    """Total node cost: parent cost plus linking cost."""
    if c_p < 0 or c_l < 0:
        raise ValueError("costs must be >= 0")
    return c_p + c_l


def local_goal(goal, center, h_plan: float) -> np.ndarray:
    """Clip the global goal onto the planning horizon sphere around center."""
    if h_plan <= 0:
        raise ValueError("h_plan must be > 0")
    goal = np.asarray(goal, dtype=float).reshape(3)
    center = np.asarray(center, dtype=float).reshape(3)
    d = float(np.linalg.norm(goal - center))
    if d <= h_plan:
        return goal.copy()
    return center + (goal - center) * (h_plan / d)


def _segment_free(centers: np.ndarray, a: np.ndarray, b: np.ndarray, clearance: float) -> bool:
    if centers.shape[0] == 0:
        return True
    return bool(np.min(segment_point_distances(a, b, centers)) > clearance)


def plan(map_snapshot, start, goal, params: PlannerParams) -> PlannerPath | None:
    """Grow an RRT* from start toward the horizon-clipped goal.

    map_snapshot is a VoxelMap or an (N, 3) array of occupied voxel centers.
    Returns a collision-free PlannerPath, or None when the start is blocked
    or no connection to the clipped goal exists after max_iterations.
    Deterministic for a fixed (map, start, goal, rng_seed).
    """
    centers = map_snapshot.occupied_centers() if isinstance(map_snapshot, VoxelMap) \
        else np.asarray(map_snapshot, dtype=float).reshape(-1, 3)
    start = np.asarray(start, dtype=float).reshape(3)
    goal = np.asarray(goal, dtype=float).reshape(3)

    g_local = local_goal(goal, start, params.h_plan)
    if params.planar:
        g_local = g_local.copy()
        g_local[2] = start[2]

    # only voxels near the horizon ball can block an in-horizon edge
    if centers.shape[0]:
        reach = params.h_plan + params.clearance + 1e-9
        near = np.linalg.norm(centers - start, axis=1) <= reach
        centers = centers[near]

    if centers.shape[0] and np.min(np.linalg.norm(centers - start, axis=1)) <= params.clearance:
        return None  # start blocked at clearance: nothing to grow from

    if float(np.linalg.norm(g_local - start)) < 1e-9:
        return PlannerPath(start[None, :], np.zeros(1))

    rng = np.random.default_rng(params.rng_seed)
    cap = params.max_iterations + 1
    nodes = np.empty((cap, 3))
    parent = np.full(cap, -1, dtype=int)
    cost = np.zeros(cap)
    children: list[list[int]] = [[] for _ in range(cap)]
    nodes[0] = start
    n = 1
    goal_links: list[int] = []  # nodes with a verified free segment to g_local

    def sample_point() -> np.ndarray:
        if rng.random() < params.goal_bias:
            return g_local
        if params.planar:
            r = params.h_plan * math.sqrt(rng.random())
            ang = 2.0 * math.pi * rng.random()
            return start + np.array([r * math.cos(ang), r * math.sin(ang), 0.0])
        u = rng.normal(size=3)
        norm = float(np.linalg.norm(u))
        if norm < 1e-12:
            return start.copy()
        r = params.h_plan * rng.random() ** (1.0 / 3.0)
        return start + u * (r / norm)

    def propagate_cost(root: int, delta: float) -> None:
        stack = [root]
        while stack:
            i = stack.pop()
            cost[i] += delta
            stack.extend(children[i])

    r2_rewire = params.rewire_radius ** 2
    for _ in range(params.max_iterations):
        target = sample_point()
        diff = nodes[:n] - target
        d2 = np.einsum("ij,ij->i", diff, diff)
        nearest = int(np.argmin(d2))
        d_near = math.sqrt(float(d2[nearest]))
        if d_near < 1e-12:
            continue
        step = min(params.step_size, d_near)
        q_new = nodes[nearest] + (target - nodes[nearest]) * (step / d_near)

        diff = nodes[:n] - q_new
        d2 = np.einsum("ij,ij->i", diff, diff)
        if float(np.min(d2)) < 1e-18:
            continue  # duplicate node

        # choose parent: cheapest collision-free link in the neighborhood
        nbr = np.flatnonzero(d2 <= r2_rewire)
        if nbr.size == 0:
            nbr = np.array([nearest])
        d_nbr = np.sqrt(d2[nbr])
        through = cost[nbr] + d_nbr
        best_parent = -1
        best_cost = math.inf
        order = np.argsort(through, kind="stable")
        for oi in order:
            j = int(nbr[oi])
            through_cost = float(through[oi])
            if through_cost >= best_cost:
                break
            if _segment_free(centers, nodes[j], q_new, params.clearance):
                best_parent = j
                best_cost = through_cost
                break
        if best_parent < 0:
            continue

        idx = n
        nodes[idx] = q_new
        parent[idx] = best_parent
        cost[idx] = best_cost
        children[best_parent].append(idx)
        n += 1

        # rewire the neighborhood through the new node where it is cheaper
        for oi in range(nbr.size):
            j = int(nbr[oi])
            if j == best_parent:
                continue
            new_cost = best_cost + float(d_nbr[oi])
            if new_cost + 1e-12 < cost[j] and _segment_free(centers, q_new, nodes[j], params.clearance):
                children[parent[j]].remove(j)
                parent[j] = idx
                children[idx].append(j)
                propagate_cost(j, new_cost - cost[j])

        d_goal = float(np.linalg.norm(q_new - g_local))
        if d_goal <= params.step_size and _segment_free(centers, q_new, g_local, params.clearance):
            goal_links.append(idx)

    if not goal_links:
        return None
    finals = [(cost[i] + float(np.linalg.norm(nodes[i] - g_local)), i) for i in goal_links]
    _, best = min(finals)

    chain = []
    i = best
    while i >= 0:
        chain.append(i)
        i = int(parent[i])
    chain.reverse()
    pts = [nodes[i] for i in chain]
    if float(np.linalg.norm(pts[-1] - g_local)) > 1e-12:
        pts.append(g_local)
    return PlannerPath(np.array(pts))


def project_reference(est_p_u, path: PlannerPath) -> np.ndarray:
    """Orthogonal projection of the marker estimate onto the active segment.

    Clamped to the segment endpoints; a single-point path returns its point.
    """
    u = np.asarray(est_p_u, dtype=float).reshape(3)
    if path.active_segment == 0:
        return path.setpoints[0].copy()
    a = path.setpoints[path.active_segment - 1]
    b = path.setpoints[path.active_segment]
    ab = b - a
    t = float((u - a) @ ab) / float(ab @ ab)
    t = min(1.0, max(0.0, t))
    return a + t * ab


def advance_segment(p, path: PlannerPath, eps: float) -> tuple[int, bool]:
    """Advance the active segment as the vehicle captures setpoints.

    The index increments (never decrements) while the vehicle is within eps
    of the active segment's far endpoint; ties between consecutive captures
    resolve to the higher index. Returns (new_index, final_reached) where
    final_reached is True when the last setpoint is captured, signalling a
    replan if the global goal lies beyond this path.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    p = np.asarray(p, dtype=float).reshape(3)
    i = path.active_segment
    if i == 0:
        return 0, bool(np.linalg.norm(p - path.setpoints[0]) < eps)
    while i < path.n_segments and np.linalg.norm(p - path.setpoints[i]) < eps:
        i += 1
    final = bool(np.linalg.norm(p - path.setpoints[-1]) < eps)
    return i, final

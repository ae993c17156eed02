"""Value map, frontiers, the room override and a grid local planner."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import lexicon
from .goal import GoalSpec
from .mapping import (
    FREE,
    NO_ROOM,
    UNKNOWN,
    GridStack,
    InstanceStore,
    VerificationState,
    cost_distances,
    nearest_cell,
    record_room,
    trace_rays,
)
from .scene import AGENT_RADIUS, FORWARD_STEP, INSTANCE, TURN_ANGLE, Action, AgentState, DepthImage, Scene

BASE_SIMILARITY = 0.1
CONTEXT_BONUS = 0.3
TARGET_BONUS = 0.5
CONTEXT_RADIUS = 1.0
MIN_FRONTIER_CELLS = 5


class ExplorationExhausted(Exception):
    """No reachable frontier is left."""


class ReplanNeeded(Exception):
    """The waypoint cannot be reached on the current map."""


@dataclass
class SimilarityField:
    values: np.ndarray  # one value in [0, 1] per depth column

    def __post_init__(self):
        self.values = np.clip(np.asarray(self.values, float), 0.0, 1.0)

    @property
    def width(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SimilarityConfig:
    noise_sigma: float = 0.0
    context_radius: float = CONTEXT_RADIUS


def oracle_similarity(
    scene: Scene,
    depth: DepthImage,
    goal: GoalSpec,
    config: SimilarityConfig = SimilarityConfig(),
    rng: np.random.Generator | None = None,
) -> SimilarityField:
    """Ground-truth stand-in for per-column text/image similarity.

    A column scores the base value, plus a bonus when its ray sees a context
    object (or passes within ``context_radius`` of one's centroid), plus a
    larger bonus when it sees an instance of the target category.
    """
    w = depth.width
    sim = np.full(w, BASE_SIMILARITY)
    cats = [lexicon.canonical_category(i.category) for i in scene.instances]
    target = lexicon.canonical_category(goal.target_category)
    contexts = {lexicon.canonical_category(c) for c in goal.context_categories}
    is_ctx = np.array([c in contexts for c in cats], bool)
    is_tgt = np.array([c == target for c in cats], bool)

    ctx_col = np.zeros(w, bool)
    tgt_col = np.zeros(w, bool)
    inst = depth.surf_kind == INSTANCE
    if inst.any():
        owners = depth.surf_owner[inst]
        cols = depth.surf_col[inst]
        ctx_col[cols[is_ctx[owners]]] = True
        tgt_col[cols[is_tgt[owners]]] = True

    if is_ctx.any():
        centers = np.array([scene.instances[k].centroid for k in np.flatnonzero(is_ctx)])
        theta = depth.column_headings()
        length = np.where(np.isfinite(depth.ranges), depth.ranges, depth.sensor.max_range)
        o = np.array(depth.pose[:2])
        d = np.column_stack([np.cos(theta), np.sin(theta)])
        rel = centers[None, :, :] - o[None, None, :]  # (1, K, 2)
        t = np.clip((rel * d[:, None, :]).sum(-1), 0.0, length[:, None])  # (W, K)
        closest = o[None, None, :] + t[..., None] * d[:, None, :]
        dist = np.linalg.norm(centers[None, :, :] - closest, axis=-1)
        ctx_col |= (dist <= config.context_radius).any(axis=1)

    sim = sim + CONTEXT_BONUS * ctx_col + TARGET_BONUS * tgt_col
    if config.noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        sim = sim + rng.normal(0.0, config.noise_sigma, size=w)
    return SimilarityField(sim)


def column_confidence(depth: DepthImage) -> np.ndarray:
    """cos^2 falloff from the optical axis, reaching zero at the FOV edge."""
    ang = depth.sensor.column_angles()
    half = depth.hfov / 2
    return np.cos(ang / half * (math.pi / 2)) ** 2


def update_value_map(grids: GridStack, sim: SimilarityField, depth: DepthImage, state: AgentState | None = None,
                     rays=None) -> GridStack:
    """Confidence-weighted fusion of column similarities into the value layer.

    Within one frame a cell keeps the sample of its most confident column.
    Across frames: v = (c0*v0 + c*v) / (c0 + c), c = (c0^2 + c^2) / (c0 + c).
    """
    if sim.width != depth.width:
        raise ValueError("similarity field and depth image widths differ")
    cols, flat, _, _ = rays if rays is not None else trace_rays(grids, depth)
    if len(flat) == 0:
        return grids
    conf = column_confidence(depth)[cols]
    order = np.lexsort((-conf, flat))
    flat_s, first = np.unique(flat[order], return_index=True)
    pick = order[first]
    c_new = conf[pick]
    v_new = sim.values[cols[pick]]
    value, confidence = grids.value.reshape(-1), grids.confidence.reshape(-1)
    c0, v0 = confidence[flat_s], value[flat_s]
    total = c0 + c_new
    ok = total > 0
    value[flat_s[ok]] = ((c0 * v0 + c_new * v_new)[ok]) / total[ok]
    confidence[flat_s[ok]] = ((c0 ** 2 + c_new ** 2)[ok]) / total[ok]
    return grids


# ---------------------------------------------------------------------------
# frontiers


@dataclass
class Frontier:
    cell: tuple[int, int]
    cells: np.ndarray
    value: float
    room: int
    distance: float = math.inf

    def point(self, grids: GridStack) -> np.ndarray:
        return grids.to_world(self.cell)

    def to_json(self, grids: GridStack) -> dict:
        return {
            "cells": self.cells.tolist(),
            "value": round(float(self.value), 6),
            "room": int(self.room),
            "point": [round(float(v), 4) for v in self.point(grids)],
        }


def extract_frontiers(grids: GridStack, min_cells: int = MIN_FRONTIER_CELLS) -> list[Frontier]:
    occ = grids.occupancy
    unknown = occ == UNKNOWN
    near_unknown = ndimage.binary_dilation(unknown, structure=np.ones((3, 3), bool))
    mask = (occ == FREE) & near_unknown
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), int))
    out = []
    if n == 0:
        return out
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        ii, jj = np.nonzero(labels[sl] == k)
        if len(ii) < min_cells:
            continue
        ii = ii + sl[0].start
        jj = jj + sl[1].start
        ci, cj = ii.mean(), jj.mean()
        d = (ii - ci) ** 2 + (jj - cj) ** 2
        m = np.lexsort((jj, ii, d))[0]
        rep = (int(ii[m]), int(jj[m]))
        val = float(grids.value[rep]) if grids.confidence[rep] > 0 else 0.0
        out.append(Frontier(rep, np.column_stack([ii, jj]), val, int(grids.room[rep])))
    return out


def frontier_distances(frontiers: list[Frontier], grids: GridStack, agent_xy) -> None:
    """Fill ``distance`` with the geodesic distance from the agent over free cells."""
    if not frontiers:
        return
    free = grids.free
    start = nearest_cell(free, grids.to_cell(agent_xy), 10)
    if start is None:
        for f in frontiers:
            f.distance = math.inf
        return
    cum = cost_distances(np.where(free, 1.0, np.inf), start, [f.cell for f in frontiers])
    for f in frontiers:
        f.distance = float(cum[f.cell]) * grids.resolution


def rank_frontiers(
    frontiers: list[Frontier],
    grids: GridStack,
    agent_xy=None,
    mode: str = "value",
    drop_unreachable: bool = True,
) -> list[Frontier]:
    """Order frontiers by value, then geodesic distance, then cell index.

    ``mode="nearest"`` ignores values (nearest-frontier exploration).
    """
    if agent_xy is not None:
        frontier_distances(frontiers, grids, agent_xy)
    prune = drop_unreachable and agent_xy is not None
    pool = [f for f in frontiers if not (prune and not math.isfinite(f.distance))]
    if not pool:
        raise ExplorationExhausted("no reachable frontier")
    if mode == "value":
        key = lambda f: (-round(f.value, 6), f.distance, f.cell)
    elif mode == "nearest":
        key = lambda f: (f.distance, f.cell)
    else:
        raise ValueError(f"unknown ranking mode {mode!r}")
    return sorted(pool, key=key)


@dataclass
class ExplorationState:
    override_available: bool = True
    override_step: int | None = None
    waypoint: Frontier | None = None
    visited: list[tuple[int, int]] = field(default_factory=list)


def override_room(grids: GridStack, store: InstanceStore, goal: GoalSpec, frontiers: list[Frontier]) -> int | None:
    """Room that satisfies all three override conditions, if any."""
    targets = [r for r in store.of_category(goal.target_category) if r.state != VerificationState.REJECTED]
    for rec in sorted(targets, key=lambda r: r.id):
        room = record_room(grids, rec)
        if room == NO_ROOM:
            continue
        missing = [
            c for c in sorted(goal.context_categories)
            if not any(record_room(grids, r) == room for r in store.of_category(c))
        ]
        if not missing:
            continue
        if any(f.room == room for f in frontiers):
            return room
    return None


def apply_room_override(
    xs: ExplorationState,
    grids: GridStack,
    store: InstanceStore,
    goal: GoalSpec,
    ranked: list[Frontier],
    step: int | None = None,
) -> Frontier:
    """Head of ``ranked`` unless the one-shot room constraint fires."""
    if not ranked:
        raise ExplorationExhausted("no frontier to choose from")
    if xs.override_available:
        room = override_room(grids, store, goal, ranked)
        if room is not None:
            in_room = [f for f in ranked if f.room == room]
            choice = min(in_room, key=lambda f: (f.distance, f.cell))
            xs.override_available = False
            xs.override_step = step
            return choice
    return ranked[0]


# ---------------------------------------------------------------------------
# local planner


@dataclass(frozen=True)
class PlannerConfig:
    lethal_radius: float = 0.2
    soft_radius: float = 0.4
    soft_weight: float = 2.0
    unknown_cost: float = 2.0
    lookahead: float = 0.35
    heading_tolerance: float = math.radians(15.0)
    stop_radius: float = 0.2
    goal_snap: float = 0.5


def _wrap(a: float) -> float:
    a = math.remainder(a, 2 * math.pi)
    return a


def heading_action(state: AgentState, target_xy, tol: float) -> Action:
    """Forward when facing ``target_xy`` within ``tol``, else turn toward it (left on ties)."""
    want = math.atan2(target_xy[1] - state.y, target_xy[0] - state.x)
    err = _wrap(want - state.heading)
    if abs(err) <= tol + 1e-9:
        return Action.FORWARD
    if abs(abs(err) - math.pi) < 1e-9:
        return Action.TURN_LEFT
    return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT


def cost_map(grids: GridStack, cfg: PlannerConfig, start_cell=None) -> np.ndarray:
    """Traversal cost per cell: inf on and next to obstacles, higher near them and in unknown space."""
    r = grids.resolution
    occupied = grids.occupied
    clearance = ndimage.distance_transform_edt(~occupied) * r
    costs = np.where(grids.known, 1.0, cfg.unknown_cost)
    soft = np.clip((cfg.soft_radius - clearance) / (cfg.soft_radius - cfg.lethal_radius), 0.0, 1.0)
    costs = costs + cfg.soft_weight * soft
    costs[clearance <= cfg.lethal_radius + 1e-9] = np.inf
    if start_cell is not None:
        release_start(costs, occupied, start_cell, cfg, r)
    return costs


def release_start(costs: np.ndarray, occupied: np.ndarray, start_cell, cfg: PlannerConfig, r: float) -> None:
    """Make the inflated area around the agent passable so it is never trapped by fresh hits."""
    k = int(math.ceil(cfg.lethal_radius / r))
    i0, i1 = max(0, start_cell[0] - k), min(costs.shape[0], start_cell[0] + k + 1)
    j0, j1 = max(0, start_cell[1] - k), min(costs.shape[1], start_cell[1] + k + 1)
    win = costs[i0:i1, j0:j1]
    ok = ~occupied[i0:i1, j0:j1] & ~np.isfinite(win)
    win[ok] = 1.0 + cfg.soft_weight


def _trace_path(cum: np.ndarray, goal, costs: np.ndarray) -> list[tuple[int, int]]:
    """Steepest-descent backtrack over cumulative costs (8-connected)."""
    path = [tuple(goal)]
    cur = tuple(goal)
    nx, ny = cum.shape
    while cum[cur] > 0:
        best, best_v = None, cum[cur]
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                n = (cur[0] + di, cur[1] + dj)
                if 0 <= n[0] < nx and 0 <= n[1] < ny and cum[n] < best_v:
                    best, best_v = n, cum[n]
        if best is None:
            break
        cur = best
        path.append(cur)
    path.reverse()
    return path


class LocalPlanner:
    """Grid path planner that re-searches when the goal changes or the current path gets blocked."""

    def __init__(self, cfg: PlannerConfig = PlannerConfig()):
        self.cfg = cfg
        self._key = None
        self._path: list[tuple[int, int]] = []
        self._path_shape = None
        self._costs: np.ndarray | None = None
        self._cost_key = None
        self.searches = 0

    def reset(self) -> None:
        self._key = None
        self._path = []

    def _cost(self, grids: GridStack) -> np.ndarray:
        key = (grids.obstacle_version, grids.shape)
        if self._cost_key != key:
            self._costs = cost_map(grids, self.cfg)
            self._occupied = grids.occupied
            self._cost_key = key
        return self._costs

    def _search(self, grids: GridStack, state: AgentState, goal_xy) -> list[tuple[int, int]]:
        start = tuple(int(v) for v in grids.to_cell([state.x, state.y]))
        base = self._cost(grids)
        # snap the goal on the unreleased map so it never lands in the agent's own inflation
        goal = nearest_cell(np.isfinite(base), grids.to_cell(goal_xy), int(math.ceil(self.cfg.goal_snap / grids.resolution)))
        costs = base.copy()
        release_start(costs, self._occupied, start, self.cfg, grids.resolution)
        if goal is None or not np.isfinite(costs[start]):
            raise ReplanNeeded("goal or start not traversable")
        cum = cost_distances(costs, start, [goal])
        if not np.isfinite(cum[goal]):
            raise ReplanNeeded("no path to goal")
        self.searches += 1
        return _trace_path(cum, goal, costs)

    def _path_valid(self, grids: GridStack, state: AgentState) -> bool:
        """The remaining path is still near the agent and clear of lethal obstacles."""
        if not self._path or self._path_shape != grids.shape:
            return False
        path = np.array(self._path)
        pts = grids.to_world(path)
        d = np.hypot(pts[:, 0] - state.x, pts[:, 1] - state.y)
        if d.min() > 0.3:
            return False
        rest = path[int(np.argmin(d)) + 1:]
        if len(rest) == 0:
            return True
        k = int(math.ceil(self.cfg.lethal_radius / grids.resolution))
        oi, oj = np.mgrid[-k:k + 1, -k:k + 1]
        disk = (oi ** 2 + oj ** 2) * grids.resolution ** 2 <= self.cfg.lethal_radius ** 2 + 1e-9
        oi, oj = oi[disk], oj[disk]
        ii = np.clip(rest[:, 0:1] + oi[None, :], 0, grids.shape[0] - 1)
        jj = np.clip(rest[:, 1:2] + oj[None, :], 0, grids.shape[1] - 1)
        occ = grids.occupied[ii, jj]
        # cells around the start were released when the path was planned
        near = np.hypot(grids.to_world(rest)[:, 0] - state.x, grids.to_world(rest)[:, 1] - state.y) <= self.cfg.lethal_radius
        return not occ[~near].any()

    def next_action(self, grids: GridStack, state: AgentState, waypoint_xy) -> Action:
        wp = np.asarray(waypoint_xy, float)
        if math.hypot(wp[0] - state.x, wp[1] - state.y) <= self.cfg.stop_radius:
            return Action.STOP
        key = tuple(np.round(wp, 6))
        if key != self._key or not self._path_valid(grids, state):
            self._path = self._search(grids, state, wp)
            self._path_shape = grids.shape
            self._key = key
        pts = grids.to_world(np.array(self._path))
        d = np.hypot(pts[:, 0] - state.x, pts[:, 1] - state.y)
        k = int(np.argmin(d))
        ahead = np.flatnonzero(d[k:] >= self.cfg.lookahead)
        target = pts[k + ahead[0]] if len(ahead) else pts[-1]
        if len(ahead) == 0 and math.hypot(target[0] - state.x, target[1] - state.y) < 1e-6:
            target = wp
        return heading_action(state, target, self.cfg.heading_tolerance)


def plan_local(grids: GridStack, state: AgentState, waypoint, cfg: PlannerConfig = PlannerConfig()) -> Action:
    """Single-shot planning step (fresh search against the current map)."""
    return LocalPlanner(cfg).next_action(grids, state, waypoint)


# ---------------------------------------------------------------------------
# final approach


@dataclass(frozen=True)
class ApproachConfig:
    margin: float = 0.02  # stop this far inside the success radius
    cell_pad: float = 0.036  # obstacle cells are inflated by half their diagonal
    point_pad: float = 0.02
    bucket: float = 0.03
    max_expansions: int = 6000


def _blocked(tree, pts: np.ndarray, p0: np.ndarray, p1: np.ndarray, clear: float) -> bool:
    if tree is None:
        return False
    mid = (p0 + p1) / 2
    idx = tree.query_ball_point(mid, float(np.linalg.norm(p1 - p0)) / 2 + clear)
    if not idx:
        return False
    q = pts[idx]
    d = p1 - p0
    u = np.clip(((q - p0) @ d) / max(float(d @ d), 1e-18), 0.0, 1.0)
    dist = np.linalg.norm(q - (p0 + u[:, None] * d), axis=1)
    return bool((dist < clear).any())


def lattice_approach(
    state: AgentState,
    target_pts: np.ndarray,
    obstacle_cells: np.ndarray,
    radius: float,
    cfg: ApproachConfig = ApproachConfig(),
    extra_points: np.ndarray | None = None,
) -> list[Action] | None:
    """Shortest action sequence that ends within ``radius`` of the target points.

    Searches the poses the discrete action set can actually reach, so the
    stop position is exact rather than snapped to a grid cell.  Obstacle
    cell centers are kept at body radius plus ``cell_pad``; target surface
    points and ``extra_points`` at body radius plus ``point_pad``.
    """
    tgt = np.asarray(target_pts, float).reshape(-1, 2)
    if len(tgt) == 0:
        return None
    t_tree = cKDTree(tgt)
    obs = np.asarray(obstacle_cells, float).reshape(-1, 2)
    o_tree = cKDTree(obs) if len(obs) else None
    ext = np.asarray(extra_points if extra_points is not None else np.zeros((0, 2)), float).reshape(-1, 2)
    pts = np.vstack([tgt, ext])
    p_tree = cKDTree(pts)
    goal_r = radius - cfg.margin
    c_obs = AGENT_RADIUS + cfg.cell_pad
    c_pts = AGENT_RADIUS + cfg.point_pad

    def h(p):
        d, _ = t_tree.query(p)
        return max(0.0, d - goal_r) / FORWARD_STEP

    start = (state.x, state.y, state.heading)
    k0 = int(round(state.heading / TURN_ANGLE)) % 12
    open_: list = [(h(np.array(start[:2])), 0, 0, start, k0, ())]
    seen = set()
    tie = 0
    expansions = 0
    while open_ and expansions < cfg.max_expansions:
        f, g, _, (x, y, hd), k, plan = heapq.heappop(open_)
        key = (round(x / cfg.bucket), round(y / cfg.bucket), k)
        if key in seen:
            continue
        seen.add(key)
        p = np.array([x, y])
        if t_tree.query(p)[0] <= goal_r:
            return list(plan)
        expansions += 1
        moves = []
        for act, dk in ((Action.TURN_LEFT, 1), (Action.TURN_RIGHT, -1)):
            moves.append((act, x, y, (k + dk) % 12))
        ang = k * TURN_ANGLE
        q = p + FORWARD_STEP * np.array([math.cos(ang), math.sin(ang)])
        if not _blocked(o_tree, obs, p, q, c_obs) and not _blocked(p_tree, pts, p, q, c_pts):
            moves.append((Action.FORWARD, float(q[0]), float(q[1]), k))
        for act, nx, ny, nk in moves:
            if (round(nx / cfg.bucket), round(ny / cfg.bucket), nk) in seen:
                continue
            tie += 1
            ng = g + 1
            heapq.heappush(open_, (ng + h(np.array([nx, ny])), ng, tie, (nx, ny, nk * TURN_ANGLE), nk, plan + (act,)))
    return None


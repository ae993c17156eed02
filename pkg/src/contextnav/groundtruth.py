"""Ground-truth geometry queries used for scoring and scene self-checks."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from . import lexicon
from .mapping import RESOLUTION, GridStack, cost_distances, grid_from_scene, nearest_cell
from .scene import AGENT_RADIUS, BODY_HEIGHT, WALL, GroundTruthInstance, Scene, segment_distances

# cells whose center clears every obstacle cell by this much are traversable
PASS_CLEARANCE = 0.2


def footprint_nearest(inst: GroundTruthInstance, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2D distance from points to the instance footprint (0 inside) and the nearest footprint points."""
    xy = np.atleast_2d(np.asarray(xy, float))
    poly = np.asarray(inst.footprint, float)
    n = len(poly)
    d = np.full(len(xy), np.inf)
    near = xy.copy()
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        s = b - a
        u = np.clip(((xy - a) @ s) / max(float(s @ s), 1e-18), 0.0, 1.0)
        q = a + u[:, None] * s
        dk = np.hypot(xy[:, 0] - q[:, 0], xy[:, 1] - q[:, 1])
        better = dk < d
        d = np.where(better, dk, d)
        near[better] = q[better]
    area = 0.5 * sum(poly[k, 0] * poly[(k + 1) % n, 1] - poly[(k + 1) % n, 0] * poly[k, 1] for k in range(n))
    sgn = 1.0 if area > 0 else -1.0
    inside = np.ones(len(xy), bool)
    for k in range(n):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % n]
        inside &= sgn * ((bx - ax) * (xy[:, 1] - ay) - (by - ay) * (xy[:, 0] - ax)) >= 0
    near[inside] = xy[inside]
    return np.where(inside, 0.0, d), near


def footprint_distance(inst: GroundTruthInstance, xy: np.ndarray) -> np.ndarray:
    """2D distance from points to the instance footprint (0 inside)."""
    return footprint_nearest(inst, xy)[0]


def reach_distance(scene: Scene, inst: GroundTruthInstance, xy: np.ndarray) -> np.ndarray:
    """Footprint distance, or inf where a blocking wall separates the point from the footprint.

    Keeps an item mounted on a partition wall from counting as reached from
    the room behind it.
    """
    xy = np.atleast_2d(np.asarray(xy, float))
    d, q = footprint_nearest(inst, xy)
    e = scene.edges
    sel = (e["kind"] == WALL) & (e["zlo"] < BODY_HEIGHT)
    if not sel.any() or len(xy) == 0:
        return d
    ax, ay, bx, by = (e[k][sel][None, :] for k in ("ax", "ay", "bx", "by"))
    p0 = (xy[:, 0:1], xy[:, 1:2])
    p1 = (q[:, 0:1], q[:, 1:2])
    sep = segment_distances(p0, p1, ax, ay, bx, by) < 1e-9
    return np.where(sep.any(axis=1), np.inf, d)


def clearance(scene: Scene, xy: np.ndarray) -> np.ndarray:
    """Exact distance from points to the nearest blocking wall or footprint edge."""
    xy = np.atleast_2d(np.asarray(xy, float))
    e = scene.edges
    block = e["zlo"] < BODY_HEIGHT
    ax, ay, bx, by = (e[k][block] for k in ("ax", "ay", "bx", "by"))
    if len(ax) == 0:
        return np.full(len(xy), np.inf)
    px, py = xy[:, 0:1], xy[:, 1:2]
    sx, sy = bx - ax, by - ay
    len2 = np.maximum(sx * sx + sy * sy, 1e-18)
    u = np.clip(((px - ax) * sx + (py - ay) * sy) / len2, 0.0, 1.0)
    return np.hypot(px - (ax + u * sx), py - (ay + u * sy)).min(axis=1)


class GroundTruth:
    """Fully observed map of a scene with cached traversability."""

    def __init__(self, scene: Scene, resolution: float = RESOLUTION):
        self.scene = scene
        self.grids = grid_from_scene(scene, resolution)
        dist = ndimage.distance_transform_edt(~self.grids.hit) * resolution
        self.passable = self.grids.seen & (dist > PASS_CLEARANCE)

    def approach_cells(self, inst: GroundTruthInstance, radius: float, margin: float = 0.02) -> np.ndarray:
        """Cells where a disc agent fits and lies within ``radius - margin`` of the footprint."""
        g = self.grids
        poly = np.asarray(inst.footprint)
        lo = g.to_cell(poly.min(axis=0) - radius - 0.1)
        hi = g.to_cell(poly.max(axis=0) + radius + 0.1)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, np.array(g.shape) - 1)
        ii, jj = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
        cells = np.column_stack([ii.ravel(), jj.ravel()])
        if len(cells) == 0:
            return cells
        xy = g.to_world(cells)
        near = reach_distance(self.scene, inst, xy) <= radius - margin
        cells, xy = cells[near], xy[near]
        if len(cells) == 0:
            return cells
        ok = clearance(self.scene, xy) >= AGENT_RADIUS + margin
        return cells[ok]

    def shortest_path(self, start_xy, inst: GroundTruthInstance, radius: float) -> float:
        """Geodesic length from ``start_xy`` to the nearest admissible stopping cell (inf if none)."""
        g = self.grids
        goal_cells = self.approach_cells(inst, radius)
        if len(goal_cells) == 0:
            return math.inf
        start = nearest_cell(self.passable, g.to_cell(start_xy), 4)
        if start is None:
            return math.inf
        reach = self.passable.copy()
        reach[goal_cells[:, 0], goal_cells[:, 1]] = True
        cum = cost_distances(np.where(reach, 1.0, np.inf), start, [tuple(c) for c in goal_cells])
        d = cum[goal_cells[:, 0], goal_cells[:, 1]].min()
        return float(d) * g.resolution if np.isfinite(d) else math.inf


def same_category(scene: Scene, category: str) -> list[GroundTruthInstance]:
    c = lexicon.canonical_category(category)
    return [i for i in scene.instances if lexicon.canonical_category(i.category) == c]

"""Online maps: occupancy, instance clouds, wall layer, rooms and path queries."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.graph import MCP_Geometric

from .scene import BODY_HEIGHT, DepthImage, Scene

RESOLUTION = 0.05
UNKNOWN, FREE, OCCUPIED = 0, 1, 2
NO_ROOM = 0

PROXIMITY_RADIUS = 0.26
OVERLAP_THRESHOLD = 0.45
VOXEL_SIZE = 0.05
MAX_OVERLAP_SAMPLES = 5000
# merged clouds above this size are thinned by voxel averaging
CLOUD_CAP = 8000


# ---------------------------------------------------------------------------
# grid stack


@dataclass
class GridStack:
    """Co-registered top-down layers indexed ``[i, j]`` with i along x.

    Occupancy is derived from two evidence layers: ``hit`` (a range return
    landed in the cell) and ``seen`` (a ray passed through it).  Hits win
    over free-space evidence; wall cells never observed as traversable count
    as occupied.
    """

    origin: np.ndarray
    resolution: float
    hit: np.ndarray
    seen: np.ndarray
    wall: np.ndarray
    room: np.ndarray
    value: np.ndarray
    confidence: np.ndarray
    version: int = 0  # bumped whenever any evidence layer changes
    obstacle_version: int = 0  # bumped when hits or walls change

    @classmethod
    def empty(cls, xmin: float, ymin: float, xmax: float, ymax: float, resolution: float = RESOLUTION) -> GridStack:
        origin = np.array([math.floor(xmin / resolution), math.floor(ymin / resolution)]) * resolution
        nx = int(math.ceil((xmax - origin[0]) / resolution)) + 1
        ny = int(math.ceil((ymax - origin[1]) / resolution)) + 1
        shape = (nx, ny)
        return cls(
            origin=origin,
            resolution=resolution,
            hit=np.zeros(shape, bool),
            seen=np.zeros(shape, bool),
            wall=np.zeros(shape, bool),
            room=np.zeros(shape, np.int32),
            value=np.zeros(shape),
            confidence=np.zeros(shape),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.hit.shape

    @property
    def extent(self) -> tuple[float, float, float, float]:
        nx, ny = self.shape
        r = self.resolution
        return (float(self.origin[0]), float(self.origin[1]),
                float(self.origin[0] + nx * r), float(self.origin[1] + ny * r))

    @property
    def occupancy(self) -> np.ndarray:
        occ = np.full(self.shape, UNKNOWN, np.uint8)
        occ[self.seen] = FREE
        occ[self.hit | (self.wall & ~self.seen)] = OCCUPIED
        return occ

    @property
    def free(self) -> np.ndarray:
        return self.seen & ~self.hit

    @property
    def occupied(self) -> np.ndarray:
        return self.hit | (self.wall & ~self.seen)

    @property
    def known(self) -> np.ndarray:
        return self.seen | self.hit | self.wall

    def to_cell(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.floor((xy - self.origin) / self.resolution).astype(np.int64)

    def to_world(self, cell) -> np.ndarray:
        return self.origin + (np.asarray(cell, dtype=float) + 0.5) * self.resolution

    def in_bounds(self, cell) -> bool:
        i, j = int(cell[0]), int(cell[1])
        return 0 <= i < self.shape[0] and 0 <= j < self.shape[1]

    def ensure_contains(self, xmin: float, ymin: float, xmax: float, ymax: float, chunk: float = 2.0) -> None:
        """Grow every layer so the rectangle fits; existing content keeps its world position."""
        gx0, gy0, gx1, gy1 = self.extent
        if xmin >= gx0 and ymin >= gy0 and xmax < gx1 and ymax < gy1:
            return
        r = self.resolution
        pad = int(round(chunk / r))

        def grow(need: int) -> int:
            return need + pad if need > 0 else 0

        lo_i = grow(max(0, int(math.ceil((gx0 - xmin) / r))))
        lo_j = grow(max(0, int(math.ceil((gy0 - ymin) / r))))
        hi_i = grow(max(0, int(math.ceil((xmax - gx1) / r)) + 1) if xmax >= gx1 else 0)
        hi_j = grow(max(0, int(math.ceil((ymax - gy1) / r)) + 1) if ymax >= gy1 else 0)
        widths = ((lo_i, hi_i), (lo_j, hi_j))
        for name in ("hit", "seen", "wall", "room", "value", "confidence"):
            setattr(self, name, np.pad(getattr(self, name), widths))
        self.origin = self.origin - np.array([lo_i, lo_j]) * r
        self.version += 1
        self.obstacle_version += 1

    def flat(self, cells: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index((cells[:, 0], cells[:, 1]), self.shape)


def trace_rays(grids: GridStack, depth: DepthImage, sample_step: float | None = None):
    """Cells crossed by each column ray.

    Returns ``(free_cols, free_flat, hit_cols, hit_flat)``: the column and
    flat cell index of every traversed cell (deduplicated per column) and of
    every range return.  Free samples stop half a cell short of the return.
    """
    r = grids.resolution
    step = sample_step or r / 3.0
    x0, y0, _ = depth.pose
    rmax = depth.sensor.max_range
    grids.ensure_contains(x0 - rmax - r, y0 - rmax - r, x0 + rmax + r, y0 + rmax + r)
    theta = depth.column_headings()
    finite = np.isfinite(depth.ranges)
    r_end = np.where(finite, depth.ranges - 0.5 * r, rmax)
    n = int(math.ceil(rmax / step)) + 1
    t = np.arange(n) * step
    ok = t[None, :] < r_end[:, None]
    cols = np.broadcast_to(np.arange(len(theta))[:, None], ok.shape)[ok]
    tt = np.broadcast_to(t[None, :], ok.shape)[ok]
    xs = x0 + tt * np.cos(theta[cols])
    ys = y0 + tt * np.sin(theta[cols])
    cells = grids.to_cell(np.column_stack([xs, ys]))
    flat = grids.flat(cells)
    key = np.unique(cols.astype(np.int64) * grids.hit.size + flat)
    free_cols, free_flat = key // grids.hit.size, key % grids.hit.size
    hc = np.flatnonzero(finite)
    hx = x0 + depth.ranges[hc] * np.cos(theta[hc])
    hy = y0 + depth.ranges[hc] * np.sin(theta[hc])
    hit_flat = grids.flat(grids.to_cell(np.column_stack([hx, hy]))) if len(hc) else np.zeros(0, np.int64)
    return free_cols, free_flat, hc, hit_flat


def integrate_depth(grids: GridStack, depth: DepthImage, state=None, rays=None) -> GridStack:
    """Mark traversed cells free and range returns occupied (monotone evidence).

    ``rays`` may carry a ``trace_rays`` result for this grid and image.
    """
    _, free_flat, _, hit_flat = rays if rays is not None else trace_rays(grids, depth)
    seen, hit = grids.seen.reshape(-1), grids.hit.reshape(-1)
    if not seen[free_flat].all():
        seen[free_flat] = True
        grids.version += 1
    if not hit[hit_flat].all():
        hit[hit_flat] = True
        grids.version += 1
        grids.obstacle_version += 1
    return grids


def mark_hit(grids: GridStack, xy) -> None:
    cell = grids.to_cell(xy)
    if grids.in_bounds(cell) and not grids.hit[cell[0], cell[1]]:
        grids.hit[cell[0], cell[1]] = True
        grids.version += 1
        grids.obstacle_version += 1


# ---------------------------------------------------------------------------
# instance map


def _voxel_keys(points: np.ndarray, resolution: float) -> np.ndarray:
    k = np.floor(points / resolution).astype(np.int64) + (1 << 20)
    return np.unique((k[:, 0] << 42) | (k[:, 1] << 21) | k[:, 2])


def voxel_overlap(
    a: np.ndarray,
    b: np.ndarray,
    resolution: float = VOXEL_SIZE,
    max_samples: int = MAX_OVERLAP_SAMPLES,
    rng: np.random.Generator | None = None,
) -> float:
    """Shared voxels over the smaller voxel set, after sub-sampling each cloud."""
    a, b = np.asarray(a, float).reshape(-1, 3), np.asarray(b, float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("voxel_overlap needs two non-empty point sets")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    if len(a) > max_samples:
        a = a[rng.choice(len(a), max_samples, replace=False)]
    if len(b) > max_samples:
        b = b[rng.choice(len(b), max_samples, replace=False)]
    ka, kb = _voxel_keys(a, resolution), _voxel_keys(b, resolution)
    shared = len(np.intersect1d(ka, kb, assume_unique=True))
    return shared / min(len(ka), len(kb))


class VerificationState(str, Enum):
    UNVERIFIED = "unverified"
    CATEGORY_VERIFIED = "category-verified"
    REJECTED = "rejected"
    CONFIRMED = "confirmed"


# per-observation cap on stored view rays
VIEW_CAP = 200


def make_views(points: np.ndarray, origin) -> np.ndarray:
    """(x, y, ux, uy) rows: ground projection of each point plus the unit direction back to the observer."""
    xy = points[:, :2]
    if origin is None or len(xy) == 0:
        return np.zeros((0, 4))
    d = np.asarray(origin, float)[None, :2] - xy
    n = np.linalg.norm(d, axis=1)
    ok = n > 1e-9
    xy, d, n = xy[ok], d[ok], n[ok]
    if len(xy) > VIEW_CAP:
        keep = np.linspace(0, len(xy) - 1, VIEW_CAP).round().astype(int)
        xy, d, n = xy[keep], d[keep], n[keep]
    return np.column_stack([xy, d / n[:, None]])


@dataclass
class InstanceRecord:
    id: int
    category: str
    points: np.ndarray
    state: VerificationState = VerificationState.UNVERIFIED
    observations: int = 1
    views: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    center: np.ndarray = field(init=False)
    z_hat: float = field(init=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, float).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("instance record needs at least one point")
        self.views = np.asarray(self.views, float).reshape(-1, 4)
        self.refresh()

    def refresh(self) -> None:
        self.center = self.points[:, :2].mean(axis=0)
        self.z_hat = instance_height(self)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "center": [round(float(c), 6) for c in self.center],
            "z_hat": round(float(self.z_hat), 6),
            "n_points": int(len(self.points)),
            "state": self.state.value,
        }


def instance_height(record: InstanceRecord) -> float:
    """Vertical centroid of the fused cloud."""
    return float(record.points[:, 2].mean())


def _thin(points: np.ndarray, voxel: float) -> np.ndarray:
    k = np.floor(points / voxel).astype(np.int64)
    _, inv = np.unique(k, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    counts = np.bincount(inv)
    out = np.zeros((len(counts), 3))
    for d in range(3):
        out[:, d] = np.bincount(inv, weights=points[:, d]) / counts
    return out


class InstanceStore:
    """Instance records with two-pass association (center proximity, then voxel overlap)."""

    def __init__(self, seed: int = 0):
        self.records: dict[int, InstanceRecord] = {}
        self._next = 1
        self._rng = np.random.default_rng(seed)
        self.last_pass = 0  # 1 proximity merge, 2 overlap merge, 0 new record

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records.values())

    def get(self, iid: int) -> InstanceRecord:
        return self.records[iid]

    def of_category(self, category: str) -> list[InstanceRecord]:
        return [r for r in self.records.values() if r.category == category]

    def associate(self, obs: np.ndarray, category: str, origin=None) -> int:
        """Merge ``obs`` into a same-category record or open a new one; returns the record id.

        ``origin`` is the observer position, kept so the record's room can be
        looked up from the side it was seen from.
        """
        obs = np.asarray(obs, float).reshape(-1, 3)
        if len(obs) == 0:
            raise ValueError("empty observation")
        views = make_views(obs, origin)
        center = obs[:, :2].mean(axis=0)
        same = self.of_category(category)
        if same:
            d = np.array([np.linalg.norm(r.center - center) for r in same])
            k = int(np.argmin(d))
            if d[k] < PROXIMITY_RADIUS:
                self.last_pass = 1
                return self._merge(same[k], obs, views)
            scores = np.array([voxel_overlap(r.points, obs, rng=self._rng) for r in same])
            k = int(np.argmax(scores))
            if scores[k] > OVERLAP_THRESHOLD:
                self.last_pass = 2
                return self._merge(same[k], obs, views)
        self.last_pass = 0
        rec = InstanceRecord(self._next, category, obs, views=views)
        self.records[rec.id] = rec
        self._next += 1
        return rec.id

    def _merge(self, rec: InstanceRecord, obs: np.ndarray, views: np.ndarray) -> int:
        pts = np.vstack([rec.points, obs])
        if len(pts) > CLOUD_CAP:
            pts = _thin(pts, VOXEL_SIZE / 2)
        rec.points = pts
        rec.views = np.vstack([rec.views, views])
        if len(rec.views) > 4 * VIEW_CAP:
            keep = np.linspace(0, len(rec.views) - 1, 4 * VIEW_CAP).round().astype(int)
            rec.views = rec.views[keep]
        rec.observations += 1
        rec.refresh()
        return rec.id

    def to_json(self) -> list[dict]:
        return [r.to_json() for r in self.records.values()]


# ---------------------------------------------------------------------------
# wall planes


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 0.03
    min_inliers: int = 400
    max_iterations: int = 1500
    max_normal_z: float = 0.3
    max_planes: int = 3
    min_height: float = 1.0
    confidence: float = 0.99
    batch: int = 64
    subset: int = 256  # points used to rank a batch of hypotheses
    range_gate: tuple[float, float] = (0.5, 5.0)
    height_gate: tuple[float, float] = (0.8, 3.0)


@dataclass
class PlaneModel:
    normal: np.ndarray
    offset: float
    inliers: np.ndarray

    def distance(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(pts @ self.normal + self.offset)


def gate_wall_points(points: np.ndarray, ranges: np.ndarray, cfg: RansacConfig = RansacConfig()) -> np.ndarray:
    """Keep points inside both the range gate and the height gate."""
    lo, hi = cfg.range_gate
    zlo, zhi = cfg.height_gate
    keep = (ranges >= lo) & (ranges <= hi) & (points[:, 2] >= zlo) & (points[:, 2] <= zhi)
    return points[keep]


def _fit_plane(pts: np.ndarray) -> tuple[np.ndarray, float]:
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[-1]
    n = n / np.linalg.norm(n)
    return n, float(-n @ c)


def extract_wall_planes(
    points: np.ndarray, cfg: RansacConfig = RansacConfig(), rng: np.random.Generator | None = None
) -> list[PlaneModel]:
    """Sequential RANSAC for vertical planes.

    Hypotheses whose normal tilts beyond ``max_normal_z`` are discarded
    before scoring, the best one is refit by SVD, and accepted planes must
    also span ``min_height`` vertically.  Inliers of every fitted plane
    (accepted or not) leave the pool before the next round.
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    if len(pts) < 3:
        return []
    rng = rng if rng is not None else np.random.default_rng(0)
    planes: list[PlaneModel] = []
    attempts = 0
    log_fail = math.log(1.0 - cfg.confidence)
    while len(planes) < cfg.max_planes and len(pts) >= cfg.min_inliers and attempts < 2 * cfg.max_planes:
        attempts += 1
        n_pts = len(pts)
        best_count, best_n, best_d = 0, None, 0.0
        budget, done = cfg.max_iterations, 0
        sub = pts if n_pts <= cfg.subset else pts[rng.choice(n_pts, cfg.subset, replace=False)]
        while done < budget:
            b = min(cfg.batch, budget - done)
            idx = rng.integers(0, n_pts, size=(b, 3))
            p0, p1, p2 = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
            nrm = np.cross(p1 - p0, p2 - p0)
            length = np.linalg.norm(nrm, axis=1)
            valid = length > 1e-9
            nrm = nrm / np.where(valid, length, 1.0)[:, None]
            valid &= np.abs(nrm[:, 2]) <= cfg.max_normal_z
            d = -np.einsum("ij,ij->i", nrm, p0)
            # preemptive scoring: rank the batch on a subset, fully score its leader
            counts = (np.abs(sub @ nrm.T + d[None, :]) < cfg.threshold).sum(axis=0)
            counts[~valid] = -1
            k = int(np.argmax(counts))
            full = int((np.abs(pts @ nrm[k] + d[k]) < cfg.threshold).sum()) if counts[k] >= 0 else 0
            if full > best_count:
                best_count, best_n, best_d = full, nrm[k], float(d[k])
                w = best_count / n_pts
                if w >= 1.0:
                    budget = done + b
                else:
                    need = log_fail / math.log(max(1.0 - w ** 3, 1e-12))
                    budget = min(cfg.max_iterations, int(math.ceil(need)))
            done += b
        if best_n is None or best_count < cfg.min_inliers:
            break
        mask = np.abs(pts @ best_n + best_d) < cfg.threshold
        n, off = _fit_plane(pts[mask])
        refit = np.abs(pts @ n + off) < cfg.threshold
        if refit.sum() >= mask.sum():
            mask = refit
        else:
            n, off = best_n, best_d
        inl = pts[mask]
        extent = float(inl[:, 2].max() - inl[:, 2].min())
        if n[2] < 0 or (n[2] == 0 and (n[0] < 0 or (n[0] == 0 and n[1] < 0))):
            n, off = -n, -off
        if abs(n[2]) <= cfg.max_normal_z and len(inl) >= cfg.min_inliers and extent >= cfg.min_height:
            planes.append(PlaneModel(n, off, inl))
        pts = pts[~mask]
    return planes


def rasterize_walls(planes: list[PlaneModel], grids: GridStack) -> GridStack:
    """Project plane inliers onto the wall layer (cumulative)."""
    for p in planes:
        xy = p.inliers[:, :2]
        if len(xy) == 0:
            continue
        grids.ensure_contains(xy[:, 0].min(), xy[:, 1].min(), xy[:, 0].max(), xy[:, 1].max())
        cells = grids.to_cell(xy)
        flat = grids.flat(cells)
        w = grids.wall.reshape(-1)
        if not w[flat].all():
            w[flat] = True
            grids.version += 1
            grids.obstacle_version += 1
    return grids


# ---------------------------------------------------------------------------
# rooms and queries


def segment_rooms(grids: GridStack, min_cells: int = 100) -> GridStack:
    """Label 4-connected known regions separated by the (dilated) wall layer.

    Furniture returns stay inside the region so they never split a room;
    labels are then written onto free cells only.
    """
    barrier = ndimage.binary_dilation(grids.wall, structure=np.ones((3, 3), bool))
    region = (grids.seen | grids.hit) & ~barrier
    labels, n = ndimage.label(region)
    if n:
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        keep = sizes >= min_cells
        keep[0] = False
        remap = np.zeros(n + 1, np.int32)
        remap[keep] = np.arange(1, int(keep.sum()) + 1)
        labels = remap[labels]
    grids.room = np.where(grids.free, labels, NO_ROOM).astype(np.int32)
    return grids


def room_count(grids: GridStack) -> int:
    return len(np.setdiff1d(np.unique(grids.room), [NO_ROOM]))


def room_at(grids: GridStack, xy, radius: float = 0.3) -> int:
    """Majority room label around ``xy`` (NO_ROOM when none within radius)."""
    c = grids.to_cell(xy)
    k = int(math.ceil(radius / grids.resolution))
    i0, i1 = max(0, c[0] - k), min(grids.shape[0], c[0] + k + 1)
    j0, j1 = max(0, c[1] - k), min(grids.shape[1], c[1] + k + 1)
    if i0 >= i1 or j0 >= j1:
        return NO_ROOM
    win = grids.room[i0:i1, j0:j1]
    ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    d = np.hypot(ii - c[0], jj - c[1]) * grids.resolution
    vals = win[(d <= radius) & (win != NO_ROOM)]
    if len(vals) == 0:
        return NO_ROOM
    counts = np.bincount(vals)
    return int(np.argmax(counts))


def record_room(grids: GridStack, record: InstanceRecord, max_offset: float = 0.8) -> int:
    """Room an instance belongs to, voted from the side it was observed from.

    Each view ray walks from a surface point toward its observer in half-cell
    steps; the first room label met casts a vote, a wall cell met first
    discards the ray.  Records without views fall back to ``room_at``.
    """
    if len(record.views) == 0:
        return room_at(grids, record.center)
    r = grids.resolution
    offs = np.arange(1, int(max_offset / (r / 2)) + 1) * (r / 2)
    v = record.views
    xy = v[:, None, :2] + offs[None, :, None] * v[:, None, 2:]
    cells = grids.to_cell(xy.reshape(-1, 2))
    inside = (cells[:, 0] >= 0) & (cells[:, 0] < grids.shape[0]) & (cells[:, 1] >= 0) & (cells[:, 1] < grids.shape[1])
    ci = np.clip(cells[:, 0], 0, grids.shape[0] - 1)
    cj = np.clip(cells[:, 1], 0, grids.shape[1] - 1)
    room = np.where(inside, grids.room[ci, cj], NO_ROOM).reshape(len(v), len(offs))
    wall = np.where(inside, grids.wall[ci, cj], False).reshape(len(v), len(offs))
    labeled = room != NO_ROOM
    first_room = np.where(labeled.any(1), labeled.argmax(1), len(offs))
    first_wall = np.where(wall.any(1), wall.argmax(1), len(offs))
    ok = first_room < first_wall
    if not ok.any():
        return room_at(grids, record.center)
    votes = room[np.flatnonzero(ok), first_room[ok]]
    return int(np.argmax(np.bincount(votes)))


def record_from_instance(inst, rid: int = 0, spacing: float = 0.05) -> InstanceRecord:
    """Idealized record of a ground-truth instance: its side surfaces, viewed from outside."""
    poly = np.asarray(inst.footprint, float)
    c = poly.mean(axis=0)
    zs = np.arange(inst.base_z, inst.top_z + 1e-9, spacing)
    pts, views = [], []
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / spacing)) + 1)
        t = np.linspace(0.0, 1.0, n)
        seg = a[None, :] + t[:, None] * (b - a)[None, :]
        normal = np.array([b[1] - a[1], a[0] - b[0]])
        normal /= np.linalg.norm(normal)
        if normal @ (a - c) < 0:
            normal = -normal
        pts.append(np.column_stack([np.repeat(seg, len(zs), axis=0), np.tile(zs, len(seg))]))
        views.append(np.column_stack([seg, np.tile(normal, (len(seg), 1))]))
    return InstanceRecord(rid, inst.category, np.vstack(pts), views=np.vstack(views))


def traverse_cells(grids: GridStack, p, q) -> list[tuple[int, int]]:
    """Amanatides-Woo traversal of the cells crossed by segment p->q."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    r = grids.resolution
    a = (p - grids.origin) / r
    b = (q - grids.origin) / r
    cell = np.floor(a).astype(int)
    end = np.floor(b).astype(int)
    d = b - a
    step = np.sign(d).astype(int)
    t_max = np.full(2, np.inf)
    t_delta = np.full(2, np.inf)
    for k in range(2):
        if d[k] != 0:
            nxt = cell[k] + (1 if d[k] > 0 else 0)
            t_max[k] = (nxt - a[k]) / d[k]
            t_delta[k] = abs(1.0 / d[k])
    out = [(int(cell[0]), int(cell[1]))]
    limit = int(abs(end[0] - cell[0]) + abs(end[1] - cell[1])) + 2
    for _ in range(limit):
        if (cell == end).all():
            break
        k = 0 if t_max[0] < t_max[1] else 1
        if t_max[k] >= 1.0:
            break
        cell[k] += step[k]
        t_max[k] += t_delta[k]
        out.append((int(cell[0]), int(cell[1])))
    # an endpoint on a cell boundary still belongs to its own cell
    if out[-1] != (int(end[0]), int(end[1])):
        out.append((int(end[0]), int(end[1])))
    return out


def line_of_sight(grids: GridStack, p, q) -> bool:
    """True iff the segment p->q crosses no wall cell (furniture never blocks)."""
    for i, j in traverse_cells(grids, p, q):
        if 0 <= i < grids.shape[0] and 0 <= j < grids.shape[1] and grids.wall[i, j]:
            return False
    return True


def nearest_cell(mask: np.ndarray, cell, max_cells: int):
    """Closest True cell of ``mask`` within a square window, or None."""
    i0, i1 = max(0, cell[0] - max_cells), min(mask.shape[0], cell[0] + max_cells + 1)
    j0, j1 = max(0, cell[1] - max_cells), min(mask.shape[1], cell[1] + max_cells + 1)
    if i0 >= i1 or j0 >= j1:
        return None
    ii, jj = np.nonzero(mask[i0:i1, j0:j1])
    if len(ii) == 0:
        return None
    d = (ii + i0 - cell[0]) ** 2 + (jj + j0 - cell[1]) ** 2
    order = np.lexsort((jj, ii, d))
    k = order[0]
    if d[k] > max_cells ** 2:
        return None
    return int(ii[k] + i0), int(jj[k] + j0)


def _crop(mask: np.ndarray, cells, margin: int = 2) -> tuple[slice, slice]:
    ii, jj = np.nonzero(mask)
    ci = [c[0] for c in cells]
    cj = [c[1] for c in cells]
    i0 = max(0, min([ii.min()] + ci) - margin) if len(ii) else max(0, min(ci) - margin)
    i1 = min(mask.shape[0], max([ii.max()] + ci) + margin + 1) if len(ii) else min(mask.shape[0], max(ci) + margin + 1)
    j0 = max(0, min([jj.min()] + cj) - margin) if len(jj) else max(0, min(cj) - margin)
    j1 = min(mask.shape[1], max([jj.max()] + cj) + margin + 1) if len(jj) else min(mask.shape[1], max(cj) + margin + 1)
    return slice(i0, i1), slice(j0, j1)


def cost_distances(costs: np.ndarray, start, ends=None, max_cost: float | None = None) -> np.ndarray:
    """Cumulative 8-connected path cost (in cells) from ``start`` over a cost grid.

    Work is restricted to the bounding box of the finite-cost cells.
    """
    finite = np.isfinite(costs)
    pts = [start] + ([] if ends is None else list(ends))
    si, sj = _crop(finite, pts)
    mcp = MCP_Geometric(costs[si, sj], fully_connected=True)
    local_start = (start[0] - si.start, start[1] - sj.start)
    local_ends = None if ends is None else [(e[0] - si.start, e[1] - sj.start) for e in ends]
    cum, _ = mcp.find_costs([local_start], local_ends, find_all_ends=True, max_cumulative_cost=max_cost)
    out = np.full(costs.shape, np.inf)
    out[si, sj] = cum
    return out


def geodesic_distance(
    grids: GridStack,
    p,
    q,
    passable: np.ndarray | None = None,
    snap: float = 0.5,
    max_distance: float | None = None,
) -> float:
    """8-connected shortest path over free cells in meters; ``inf`` if unreachable.

    Endpoints sitting on non-free cells (object centers) snap to the nearest
    free cell within ``snap`` meters; the snap offsets are not added.
    """
    free = grids.free if passable is None else passable
    k = max(0, int(math.ceil(snap / grids.resolution)))
    a = nearest_cell(free, grids.to_cell(p), k)
    b = nearest_cell(free, grids.to_cell(q), k)
    if a is None or b is None:
        return math.inf
    if a == b:
        return 0.0
    limit = None if max_distance is None else max_distance / grids.resolution + 1.0
    cum = cost_distances(np.where(free, 1.0, np.inf), a, [b], limit)
    d = cum[b]
    if not np.isfinite(d):
        return math.inf
    return float(d) * grids.resolution


def distance_field(grids: GridStack, start, passable: np.ndarray | None = None, snap: float = 0.5,
                   max_distance: float | None = None) -> np.ndarray:
    """Geodesic distance (meters) from ``start`` to every cell; ``inf`` where unreachable."""
    free = grids.free if passable is None else passable
    a = nearest_cell(free, grids.to_cell(start), int(math.ceil(snap / grids.resolution)))
    if a is None:
        return np.full(grids.shape, np.inf)
    limit = None if max_distance is None else max_distance / grids.resolution + 1.0
    cum = cost_distances(np.where(free, 1.0, np.inf), a, None, limit)
    return cum * grids.resolution


# ---------------------------------------------------------------------------
# ground-truth grids


def _raster_segment(grids: GridStack, ax, ay, bx, by) -> np.ndarray:
    n = max(2, int(math.ceil(math.hypot(bx - ax, by - ay) / (grids.resolution / 4))) + 1)
    t = np.linspace(0.0, 1.0, n)
    xy = np.column_stack([ax + t * (bx - ax), ay + t * (by - ay)])
    return grids.flat(np.unique(grids.to_cell(xy), axis=0))


def grid_from_scene(scene: Scene, resolution: float = RESOLUTION, margin: float = 0.5) -> GridStack:
    """Fully observed map of a scene: every wall in the wall layer, obstacles as hits."""
    xmin, ymin, xmax, ymax = scene.bounds
    g = GridStack.empty(xmin - margin, ymin - margin, xmax + margin, ymax + margin, resolution)
    cx = g.origin[0] + (np.arange(g.shape[0]) + 0.5) * resolution
    cy = g.origin[1] + (np.arange(g.shape[1]) + 0.5) * resolution
    X, Y = np.meshgrid(cx, cy, indexing="ij")
    g.seen[:] = (X >= xmin) & (X <= xmax) & (Y >= ymin) & (Y <= ymax)
    wall, hit = g.wall.reshape(-1), g.hit.reshape(-1)
    for w in scene.walls:
        f = _raster_segment(g, w.x1, w.y1, w.x2, w.y2)
        wall[f] = True
        if w.base < BODY_HEIGHT:
            hit[f] = True
    for inst in scene.instances:
        if inst.base_z >= BODY_HEIGHT:
            continue
        poly = np.asarray(inst.footprint)
        pts = inst.footprint
        for a, b in zip(pts, pts[1:] + pts[:1]):
            hit[_raster_segment(g, a[0], a[1], b[0], b[1])] = True
        inside = np.ones(X.shape, bool)
        n = len(poly)
        area = 0.5 * sum(poly[k, 0] * poly[(k + 1) % n, 1] - poly[(k + 1) % n, 0] * poly[k, 1] for k in range(n))
        sgn = 1.0 if area > 0 else -1.0
        for k in range(n):
            ax, ay = poly[k]
            bx, by = poly[(k + 1) % n]
            inside &= sgn * ((bx - ax) * (Y - ay) - (by - ay) * (X - ax)) >= 0
        g.hit |= inside
    return g


# ---------------------------------------------------------------------------
# export


def _write_pgm(path: Path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def layer_images(grids: GridStack) -> dict[str, np.ndarray]:
    """8-bit images with +y up (rows flipped) for each exported layer."""
    occ = grids.occupancy
    occ_img = np.full(occ.shape, 128, np.uint8)
    occ_img[occ == FREE] = 255
    occ_img[occ == OCCUPIED] = 0
    wall_img = np.where(grids.wall, 0, 255).astype(np.uint8)
    room_img = np.where(grids.room > 0, 40 + (grids.room * 47) % 200, 0).astype(np.uint8)
    val_img = np.clip(np.round(grids.value * 255), 0, 255).astype(np.uint8)
    return {k: np.flipud(v.T) for k, v in
            {"occupancy": occ_img, "wall": wall_img, "room": room_img, "value": val_img}.items()}


def export_maps(grids: GridStack, out_dir: str | Path, prefix: str = "map", extra: dict | None = None) -> list[Path]:
    """Four layer graymaps plus a JSON sidecar (``extra`` is merged into the sidecar)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, img in layer_images(grids).items():
        p = out / f"{prefix}_{name}.pgm"
        _write_pgm(p, img)
        paths.append(p)
    side = out / f"{prefix}.json"
    xmin, ymin, xmax, ymax = grids.extent
    side.write_text(json.dumps({
        "origin": [float(grids.origin[0]), float(grids.origin[1])],
        "resolution": grids.resolution,
        "extent": {"xmin": xmin, "ymin": ymin, "xmax": xmax, "ymax": ymax,
                   "nx": grids.shape[0], "ny": grids.shape[1]},
        "layers": [p.name for p in paths],
        **(extra or {}),
    }, indent=1, sort_keys=True) + "\n")
    paths.append(side)
    return paths


LAYER_NAMES = ("hit", "seen", "wall", "room", "value", "confidence")


def save_grids(grids: GridStack, path: str | Path) -> None:
    """Compressed snapshot of every layer (for later rendering)."""
    np.savez_compressed(path, origin=grids.origin, resolution=np.array(grids.resolution),
                        **{k: getattr(grids, k) for k in LAYER_NAMES})


def load_grids(path: str | Path) -> GridStack:
    with np.load(path) as z:
        return GridStack(origin=z["origin"].astype(float), resolution=float(z["resolution"]),
                         **{k: z[k] for k in LAYER_NAMES})

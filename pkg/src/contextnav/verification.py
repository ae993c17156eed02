"""Candidate verification: binned attribute answers, then room-gated spatial relations."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .goal import RELATIONS, GoalSpec, RelationTriple
from .mapping import (
    NO_ROOM,
    GridStack,
    InstanceRecord,
    cost_distances,
    nearest_cell,
    record_room,
)

N_THETA = 24
RADII = (0.8, 1.2, 1.6, 2.0)
CONTEXT_GEODESIC = 3.0
DEFER_FRAMES = 5
MAX_BINDINGS = 64


class Bin(str, Enum):
    NO = "No"
    UNKNOWN = "Unknown"
    YES = "Yes"


def bin_score(s: int) -> Bin:
    """0-4 No, 5-10 Unknown, 11-15 Yes."""
    if isinstance(s, bool) or not isinstance(s, (int, np.integer)) or not 0 <= s <= 15:
        raise ValueError(f"score must be an integer in 0..15, got {s!r}")
    if s <= 4:
        return Bin.NO
    if s <= 10:
        return Bin.UNKNOWN
    return Bin.YES


# ---------------------------------------------------------------------------
# intrinsic


@dataclass
class FrameRecord:
    """One later observation of a candidate, scored for informativeness."""

    step: int
    similarity: float
    data: Any = None


@dataclass
class IntrinsicVerdict:
    status: str  # accepted | rejected | deferred
    frames_remaining: int = 0
    history: dict[str, list[list[Bin]]] = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"

    @property
    def deferred(self) -> bool:
        return self.status == "deferred"


VqaHandle = Callable[[Any, Any, Any], int]


def _round(questions, vqa: VqaHandle, instance_id, frame) -> list[Bin]:
    return [bin_score(int(vqa(instance_id, q, frame))) for q in questions]


def verify_intrinsic(
    goal: GoalSpec,
    instance_id,
    vqa: VqaHandle,
    frame_log: Sequence[FrameRecord] = (),
    initial_frame: Any = None,
    force: bool = False,
) -> IntrinsicVerdict:
    """Yes/Unknown/No protocol over the goal's attribute questions.

    An attribute holds if any of its questions bins Yes.  Attributes left
    open after the first pass are asked once more on the highest-similarity
    frame among the next five (earliest wins ties); whatever is still not Yes
    then fails.  With fewer than five later frames and ``force`` unset the
    verdict is deferred.
    """
    if not goal.questions:
        return IntrinsicVerdict("accepted")
    by_type: dict[str, list] = {}
    for q in goal.questions:
        by_type.setdefault(q.atype, []).append(q)
    history: dict[str, list[list[Bin]]] = {}
    pending = []
    for atype, qs in by_type.items():
        bins = _round(qs, vqa, instance_id, initial_frame)
        history[atype] = [bins]
        if Bin.YES not in bins:
            pending.append(atype)
    if not pending:
        return IntrinsicVerdict("accepted", 0, history)
    frames = list(frame_log)[:DEFER_FRAMES]
    if len(frames) < DEFER_FRAMES and not (force and frames):
        if force:
            return IntrinsicVerdict("rejected", 0, history)
        return IntrinsicVerdict("deferred", DEFER_FRAMES - len(frames), history)
    best = max(range(len(frames)), key=lambda k: (frames[k].similarity, -k))
    for atype in pending:
        bins = _round(by_type[atype], vqa, instance_id, frames[best].data)
        history[atype].append(bins)
        if Bin.YES not in bins:
            return IntrinsicVerdict("rejected", 0, history)
    return IntrinsicVerdict("accepted", 0, history)


# ---------------------------------------------------------------------------
# frames and predicates


class DegenerateFrame(ValueError):
    """Viewpoint coincides with the reference center."""


@dataclass(frozen=True)
class LocalFrame:
    origin: tuple[float, float]
    yaw: float
    u_x: tuple[float, float]
    u_y: tuple[float, float]


class LocalPoint(NamedTuple):
    x: float
    y: float
    bearing: float
    bearing_defined: bool = True


@dataclass(frozen=True)
class Tolerances:
    eps_m: float = 0.15
    eps_theta: float = math.radians(25.0)
    d_near: float = 2.0
    eps_z: float = 0.15

    def __post_init__(self):
        if min(self.eps_m, self.eps_theta, self.d_near, self.eps_z) <= 0:
            raise ValueError("tolerances must be positive")


def align_frame(v, c_r) -> LocalFrame:
    """Frame at ``v`` whose +x axis points at the reference center."""
    dx, dy = float(c_r[0]) - float(v[0]), float(c_r[1]) - float(v[1])
    if dx == 0.0 and dy == 0.0:
        raise DegenerateFrame("viewpoint equals the reference center")
    psi = math.atan2(dy, dx)
    c, s = math.cos(psi), math.sin(psi)
    return LocalFrame((float(v[0]), float(v[1])), psi, (c, s), (-s, c))


def to_local(frame: LocalFrame, q) -> LocalPoint:
    dx, dy = float(q[0]) - frame.origin[0], float(q[1]) - frame.origin[1]
    if dx == 0.0 and dy == 0.0:
        return LocalPoint(0.0, 0.0, math.nan, False)
    x = dx * frame.u_x[0] + dy * frame.u_x[1]
    y = dx * frame.u_y[0] + dy * frame.u_y[1]
    return LocalPoint(x, y, math.atan2(y, x), True)


def eval_predicate(rho: str, frame: LocalFrame, c_r, c_t, z_r: float, z_t: float,
                   tol: Tolerances = Tolerances()) -> bool:
    """One spatial relation 'target rho reference', seen from the frame origin."""
    if rho not in RELATIONS:
        raise ValueError(f"unknown relation {rho!r}")
    if rho == "above":
        return z_t - z_r >= tol.eps_z
    if rho == "below":
        return z_r - z_t >= tol.eps_z
    if rho == "near":
        return math.hypot(c_t[0] - c_r[0], c_t[1] - c_r[1]) <= tol.d_near
    r = to_local(frame, c_r)
    t = to_local(frame, c_t)
    if rho == "left":
        return t.y - r.y >= tol.eps_m
    if rho == "right":
        return r.y - t.y >= tol.eps_m
    if not t.bearing_defined:
        return False
    if rho == "front":
        return abs(t.bearing) <= tol.eps_theta and t.x <= r.x - tol.eps_m
    return abs(t.bearing) <= tol.eps_theta and t.x >= r.x + tol.eps_m


def eval_predicate_batch(rho: str, views: np.ndarray, c_r, c_t, z_r: float, z_t: float,
                         tol: Tolerances = Tolerances()) -> np.ndarray:
    """Vectorized ``eval_predicate`` over many viewpoints (degenerate views give False)."""
    views = np.asarray(views, float).reshape(-1, 2)
    n = len(views)
    if rho not in RELATIONS:
        raise ValueError(f"unknown relation {rho!r}")
    if rho == "above":
        return np.full(n, z_t - z_r >= tol.eps_z)
    if rho == "below":
        return np.full(n, z_r - z_t >= tol.eps_z)
    if rho == "near":
        return np.full(n, math.hypot(c_t[0] - c_r[0], c_t[1] - c_r[1]) <= tol.d_near)
    dr = np.asarray(c_r, float)[None, :] - views
    ok = (dr[:, 0] != 0) | (dr[:, 1] != 0)
    psi = np.arctan2(dr[:, 1], dr[:, 0])
    ux = np.column_stack([np.cos(psi), np.sin(psi)])
    uy = np.column_stack([-np.sin(psi), np.cos(psi)])
    dt = np.asarray(c_t, float)[None, :] - views
    rx, ry = (dr * ux).sum(1), (dr * uy).sum(1)
    tx, ty = (dt * ux).sum(1), (dt * uy).sum(1)
    if rho == "left":
        return ok & (ty - ry >= tol.eps_m)
    if rho == "right":
        return ok & (ry - ty >= tol.eps_m)
    t_ok = ok & ((dt[:, 0] != 0) | (dt[:, 1] != 0))
    bearing = np.abs(np.arctan2(ty, tx))
    if rho == "front":
        return t_ok & (bearing <= tol.eps_theta) & (tx <= rx - tol.eps_m)
    return t_ok & (bearing <= tol.eps_theta) & (tx >= rx + tol.eps_m)


# ---------------------------------------------------------------------------
# viewpoints


@dataclass
class ViewpointSet:
    anchors: np.ndarray
    points: np.ndarray
    raw_count: int
    radii: tuple[float, ...] = RADII
    n_theta: int = N_THETA


def viewpoint_ring(anchor, radii: Sequence[float] = RADII, n_theta: int = N_THETA) -> np.ndarray:
    """Radius-major, bearing-minor samples m + r (cos th_k, sin th_k), th_k = 2 pi k / n_theta."""
    theta = 2.0 * math.pi * np.arange(n_theta) / n_theta
    m = np.asarray(anchor, float)
    out = [m[None, :] + r * np.column_stack([np.cos(theta), np.sin(theta)]) for r in radii]
    return np.vstack(out)


def sample_viewpoints(anchors, grids: GridStack | None = None, radii: Sequence[float] = RADII,
                      n_theta: int = N_THETA) -> ViewpointSet:
    """All anchor x radius x bearing samples, with same-cell duplicates collapsed (first kept)."""
    anchors = np.asarray(anchors, float).reshape(-1, 2)
    raw = np.vstack([viewpoint_ring(a, radii, n_theta) for a in anchors]) if len(anchors) else np.zeros((0, 2))
    pts = raw
    if grids is not None and len(raw):
        cells = grids.to_cell(raw)
        _, first = np.unique(cells, axis=0, return_index=True)
        pts = raw[np.sort(first)]
    return ViewpointSet(anchors, pts, len(raw), tuple(radii), n_theta)


# ---------------------------------------------------------------------------
# extrinsic


class TargetRoomUnknown(Exception):
    """The candidate does not sit in a labeled room yet; verification must wait."""


@dataclass
class RoomFilterResult:
    room: int
    target: InstanceRecord
    contexts: list[InstanceRecord]
    pairs: dict[RelationTriple, list[tuple[InstanceRecord, InstanceRecord]]]
    relations: list[RelationTriple]  # effective relation set
    centers: np.ndarray  # center set of target and surviving contexts
    distances: dict[int, float]

    @property
    def complete(self) -> bool:
        return all(t in self.relations for t in self.pairs)


def _room_anchor(grids: GridStack, rec: InstanceRecord, room: int, free: np.ndarray):
    mask = free & (grids.room == room)
    return nearest_cell(mask, grids.to_cell(rec.center), int(math.ceil(1.5 / grids.resolution)))


def room_filter(
    target: InstanceRecord,
    contexts: Sequence[InstanceRecord],
    grids: GridStack,
    goal: GoalSpec,
    max_geodesic: float = CONTEXT_GEODESIC,
) -> RoomFilterResult | None:
    """Keep same-room contexts within ``max_geodesic`` of the target; None when none survive."""
    room = record_room(grids, target)
    if room == NO_ROOM:
        raise TargetRoomUnknown(f"instance {target.id} has no room label")
    free = grids.free
    start = _room_anchor(grids, target, room, free)
    if start is None:
        raise TargetRoomUnknown(f"instance {target.id} has no labeled free cell nearby")
    same_room = [c for c in contexts if c.id != target.id and record_room(grids, c) == room]
    ends = {}
    for c in same_room:
        e = _room_anchor(grids, c, room, free)
        if e is not None:
            ends[c.id] = e
    kept: list[InstanceRecord] = []
    distances: dict[int, float] = {}
    if ends:
        limit = max_geodesic / grids.resolution + 1.0
        cum = cost_distances(np.where(free, 1.0, np.inf), start, list(ends.values()), limit)
        for c in same_room:
            if c.id not in ends:
                continue
            d = float(cum[ends[c.id]]) * grids.resolution
            if d <= max_geodesic:
                kept.append(c)
                distances[c.id] = d
    if not kept:
        return None
    pairs: dict[RelationTriple, list] = {}
    effective = []
    tc = goal.target_category
    for t in goal.relations:
        refs = [target] if t.ref == tc else [c for c in kept if c.category == t.ref]
        tgts = [target] if t.tgt == tc else [c for c in kept if c.category == t.tgt]
        combos = [(r, g) for r in refs for g in tgts if r.id != g.id]
        combos.sort(key=lambda p: (distances.get(p[0].id, 0.0) + distances.get(p[1].id, 0.0), p[0].id, p[1].id))
        pairs[t] = combos
        if combos:
            effective.append(t)
    centers = np.array([target.center] + [c.center for c in kept])
    return RoomFilterResult(room, target, kept, pairs, effective, centers, distances)


@dataclass
class ExtrinsicResult:
    confirmed: bool
    viewpoint: np.ndarray | None = None
    binding: list[tuple[int, int]] = field(default_factory=list)
    n_viewpoints: int = 0
    bindings_tried: int = 0
    reason: str = ""


def _valid_views(points: np.ndarray, grids: GridStack, room: int) -> np.ndarray:
    if len(points) == 0:
        return points
    cells = grids.to_cell(points)
    inside = (cells[:, 0] >= 0) & (cells[:, 0] < grids.shape[0]) & (cells[:, 1] >= 0) & (cells[:, 1] < grids.shape[1])
    ci = np.clip(cells[:, 0], 0, grids.shape[0] - 1)
    cj = np.clip(cells[:, 1], 0, grids.shape[1] - 1)
    ok = inside & grids.free[ci, cj] & (grids.room[ci, cj] == room)
    return points[ok]


def verify_extrinsic(
    filtered: RoomFilterResult,
    grids: GridStack,
    tol: Tolerances = Tolerances(),
    relations: Sequence[RelationTriple] | None = None,
    max_bindings: int = MAX_BINDINGS,
) -> ExtrinsicResult:
    """Search for one viewpoint where every relation holds at once.

    Bindings (one context pair per relation) are tried nearest-first; for
    each, viewpoints around the pair midpoints and the center-set centroid
    are scanned in anchor, radius, bearing order and must lie on free cells
    of the target's room.
    """
    rels = list(filtered.relations if relations is None else relations)
    if not rels:
        return ExtrinsicResult(True, None, [], 0, 0, "no relations")
    choices = [filtered.pairs.get(t, []) for t in rels]
    if any(len(c) == 0 for c in choices):
        return ExtrinsicResult(False, reason="relation without a surviving pair")
    centroid = filtered.centers.mean(axis=0)
    total_views = 0
    tried = 0
    for binding in itertools.product(*choices):
        if tried >= max_bindings:
            break
        tried += 1
        anchors = [(a.center + b.center) / 2.0 for a, b in binding] + [centroid]
        vs = sample_viewpoints(anchors, grids)
        views = _valid_views(vs.points, grids, filtered.room)
        total_views += len(views)
        if len(views) == 0:
            continue
        ok = np.ones(len(views), bool)
        for t, (ref, tgt) in zip(rels, binding):
            ok &= eval_predicate_batch(t.rho, views, ref.center, tgt.center, ref.z_hat, tgt.z_hat, tol)
            if not ok.any():
                break
        if ok.any():
            k = int(np.argmax(ok))
            return ExtrinsicResult(True, views[k], [(a.id, b.id) for a, b in binding], total_views, tried, "confirmed")
    return ExtrinsicResult(False, None, [], total_views, tried, "no viewpoint satisfies all relations")

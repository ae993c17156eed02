"""Synthetic 2.5D world.

Walls are vertical segments with a z-extent, instances are convex prisms
(footprint polygon plus base/top height).  The depth sensor casts one ray
per image column and records every surface that remains visible in that
column's vertical slice; rows are only used for masks and back-projection.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

from . import lexicon

FORWARD_STEP = 0.25
TURN_ANGLE = math.radians(30.0)
AGENT_RADIUS = 0.18
# anything with its base below this height blocks motion and the depth range
BODY_HEIGHT = 1.5

WALL, INSTANCE = 0, 1
ATTRIBUTE_KEYS = ("color", "shape")

SCORE_YES, SCORE_UNKNOWN, SCORE_NO = 13, 7, 2


class SceneError(ValueError):
    """Scene document failed schema or semantic validation."""


class Action(str, Enum):
    FORWARD = "forward"
    TURN_LEFT = "turn-left"
    TURN_RIGHT = "turn-right"
    STOP = "stop"


@dataclass(frozen=True)
class Wall:
    x1: float
    y1: float
    x2: float
    y2: float
    height: float
    base: float = 0.0


@dataclass(frozen=True)
class GroundTruthInstance:
    id: str
    category: str
    footprint: tuple[tuple[float, float], ...]
    base_z: float
    top_z: float
    attributes: dict[str, str] = field(default_factory=dict)
    room_hint: str | None = None

    @property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(np.asarray(self.footprint, dtype=float))


@dataclass(frozen=True)
class Scene:
    bounds: tuple[float, float, float, float]
    walls: tuple[Wall, ...]
    instances: tuple[GroundTruthInstance, ...]
    spawn: tuple[float, float, float]

    @cached_property
    def _index(self) -> dict[str, int]:
        return {inst.id: k for k, inst in enumerate(self.instances)}

    def instance(self, instance_id: str) -> GroundTruthInstance:
        try:
            return self.instances[self._index[instance_id]]
        except KeyError:
            raise KeyError(f"unknown instance id {instance_id!r}") from None

    def instance_index(self, instance_id: str) -> int:
        return self._index[instance_id]

    @cached_property
    def edges(self) -> dict[str, np.ndarray]:
        """All wall segments and footprint edges as flat arrays."""
        rows = []
        for k, w in enumerate(self.walls):
            rows.append((w.x1, w.y1, w.x2, w.y2, w.base, w.height, WALL, k))
        for k, inst in enumerate(self.instances):
            pts = inst.footprint
            for a, b in zip(pts, pts[1:] + pts[:1]):
                rows.append((a[0], a[1], b[0], b[1], inst.base_z, inst.top_z, INSTANCE, k))
        arr = np.asarray(rows, dtype=float).reshape(-1, 8)
        return {
            "ax": arr[:, 0], "ay": arr[:, 1], "bx": arr[:, 2], "by": arr[:, 3],
            "zlo": arr[:, 4], "zhi": arr[:, 5],
            "kind": arr[:, 6].astype(int), "owner": arr[:, 7].astype(int),
        }

    @cached_property
    def z_top(self) -> float:
        tops = [w.height for w in self.walls] + [i.top_z for i in self.instances]
        return max(tops, default=0.0)

    def spawn_state(self) -> AgentState:
        return AgentState(self.spawn[0], self.spawn[1], self.spawn[2])


def _wrap(angle: float) -> float:
    a = math.remainder(angle, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


def _snap_heading(angle: float) -> float:
    a = _wrap(angle)
    k = round(a / TURN_ANGLE)
    if abs(a - k * TURN_ANGLE) < 1e-9:
        a = k * math.pi / 6.0
        if a <= -math.pi:
            a = math.pi
    return a


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    step_count: int = 0
    path_length: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", _snap_heading(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class SensorConfig:
    hfov_deg: float = 79.0
    width: int = 128
    height: int = 64
    vfov_deg: float = 79.0
    max_range: float = 5.0
    camera_height: float = 0.88

    def column_angles(self) -> np.ndarray:
        """Yaw offset of each column from the optical axis; column 0 is leftmost."""
        hfov = math.radians(self.hfov_deg)
        return hfov / 2 - (np.arange(self.width) + 0.5) * hfov / self.width

    def row_tangents(self) -> np.ndarray:
        vfov = math.radians(self.vfov_deg)
        elev = vfov / 2 - (np.arange(self.height) + 0.5) * vfov / self.height
        return np.tan(elev)


@dataclass
class DepthImage:
    """One row of ranges plus the visible surface stack of every column.

    ``ranges`` holds the nearest body-height obstacle per column (``inf`` when
    nothing is hit within max range).  The ``surf_*`` arrays list every
    visible vertical surface piece; ``surf_kind``/``surf_owner`` are ground
    truth and only read by the oracles.
    """

    ranges: np.ndarray
    sensor: SensorConfig
    pose: tuple[float, float, float]
    surf_col: np.ndarray
    surf_range: np.ndarray
    surf_zlo: np.ndarray
    surf_zhi: np.ndarray
    surf_kind: np.ndarray
    surf_owner: np.ndarray

    @property
    def width(self) -> int:
        return self.sensor.width

    @property
    def height(self) -> int:
        return self.sensor.height

    @property
    def hfov(self) -> float:
        return math.radians(self.sensor.hfov_deg)

    def column_headings(self) -> np.ndarray:
        return self.pose[2] + self.sensor.column_angles()

    def _rows_inside(self, sel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = self.sensor.camera_height + self.surf_range[sel, None] * self.sensor.row_tangents()[None, :]
        inside = (z >= self.surf_zlo[sel, None]) & (z <= self.surf_zhi[sel, None])
        return z, inside

    def points(self, sel: np.ndarray | None = None) -> np.ndarray:
        """Back-project the pixels of the selected surfaces to world 3D points."""
        if sel is None:
            sel = np.ones(len(self.surf_col), dtype=bool)
        idx = np.flatnonzero(sel)
        if len(idx) == 0:
            return np.zeros((0, 3))
        z, inside = self._rows_inside(idx)
        s_i, r_i = np.nonzero(inside)
        theta = self.column_headings()[self.surf_col[idx[s_i]]]
        rng = self.surf_range[idx[s_i]]
        x = self.pose[0] + rng * np.cos(theta)
        y = self.pose[1] + rng * np.sin(theta)
        return np.column_stack([x, y, z[s_i, r_i]])

    def mask(self, sel: np.ndarray) -> np.ndarray:
        out = np.zeros((self.height, self.width), dtype=bool)
        idx = np.flatnonzero(sel)
        if len(idx):
            _, inside = self._rows_inside(idx)
            s_i, r_i = np.nonzero(inside)
            out[r_i, self.surf_col[idx[s_i]]] = True
        return out

    def point_ranges(self, sel: np.ndarray | None = None) -> np.ndarray:
        """Horizontal range of every back-projected point, aligned with ``points``."""
        if sel is None:
            sel = np.ones(len(self.surf_col), dtype=bool)
        idx = np.flatnonzero(sel)
        if len(idx) == 0:
            return np.zeros(0)
        _, inside = self._rows_inside(idx)
        s_i, _ = np.nonzero(inside)
        return self.surf_range[idx[s_i]]


@dataclass
class Detection:
    instance_id: str  # hidden from the policy; oracles only
    proposed_category: str
    confidence: float
    mask: np.ndarray
    is_coco: bool
    points: np.ndarray  # masked depth back-projected to 3D

    @property
    def pixel_count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class DetectorNoise:
    flip_prob: float = 0.0
    confusion: dict[str, str] = field(default_factory=dict)
    confidence_low: float = 1.0
    confidence_high: float = 1.0
    min_pixel_fraction: float = 0.002


@dataclass(frozen=True)
class CategoryVqaNoise:
    blend: float = 0.0  # 0 = exact oracle, 1 = always 0.5
    ambiguity_pixels: int = 0  # masks smaller than this read as ambiguous


@dataclass(frozen=True)
class AttributeVqaNoise:
    max_offset: int = 0
    unknown_prob: float = 0.0


# ---------------------------------------------------------------------------
# scene files


def _num(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SceneError(f"{path}: expected a finite number, got {value!r}")
    return float(value)


def _obj(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise SceneError(f"{path}: expected an object")
    return value


def _req(doc: dict, key: str, path: str) -> Any:
    if key not in doc:
        raise SceneError(f"{path}.{key}: missing required field")
    return doc[key]


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xs, ys = np.roll(x, -1), np.roll(y, -1)
    cross = x * ys - xs * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-12:
        return poly.mean(axis=0)
    cx = ((x + xs) * cross).sum() / (6.0 * area)
    cy = ((y + ys) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def _is_convex(poly: list[tuple[float, float]]) -> bool:
    n = len(poly)
    sign = 0
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        cx, cy = poly[(i + 2) % n]
        cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
        if abs(cross) < 1e-12:
            continue
        s = 1 if cross > 0 else -1
        if sign and s != sign:
            return False
        sign = s
    return sign != 0


def scene_from_dict(doc: Any) -> Scene:
    doc = _obj(doc, "scene")
    b = _obj(_req(doc, "bounds", "scene"), "scene.bounds")
    bounds = tuple(_num(_req(b, k, "scene.bounds"), f"scene.bounds.{k}") for k in ("xmin", "ymin", "xmax", "ymax"))
    if bounds[2] <= bounds[0] or bounds[3] <= bounds[1]:
        raise SceneError("scene.bounds: empty rectangle")

    walls_doc = _req(doc, "walls", "scene")
    if not isinstance(walls_doc, list):
        raise SceneError("scene.walls: expected a list")
    walls = []
    for i, w in enumerate(walls_doc):
        p = f"scene.walls[{i}]"
        w = _obj(w, p)
        vals = [_num(_req(w, k, p), f"{p}.{k}") for k in ("x1", "y1", "x2", "y2", "height")]
        base = _num(w.get("base", 0.0), f"{p}.base")
        if vals[4] <= 0:
            raise SceneError(f"{p}.height: must be > 0")
        if not 0.0 <= base < vals[4]:
            raise SceneError(f"{p}.base: must lie in [0, height)")
        if vals[0] == vals[2] and vals[1] == vals[3]:
            raise SceneError(f"{p}: zero-length wall")
        walls.append(Wall(*vals, base=base))

    inst_doc = _req(doc, "instances", "scene")
    if not isinstance(inst_doc, list):
        raise SceneError("scene.instances: expected a list")
    instances = []
    seen: set[str] = set()
    xmin, ymin, xmax, ymax = bounds
    for i, d in enumerate(inst_doc):
        p = f"scene.instances[{i}]"
        d = _obj(d, p)
        iid = _req(d, "id", p)
        if not isinstance(iid, str) or not iid:
            raise SceneError(f"{p}.id: expected a non-empty string")
        if iid in seen:
            raise SceneError(f"{p}.id: duplicate instance id {iid!r}")
        seen.add(iid)
        cat = _req(d, "category", p)
        if not isinstance(cat, str) or not cat.strip():
            raise SceneError(f"{p}.category: expected a non-empty string")
        attrs = _obj(d.get("attributes", {}), f"{p}.attributes")
        for k, v in attrs.items():
            if k not in ATTRIBUTE_KEYS:
                raise SceneError(f"{p}.attributes.{k}: only color and shape are allowed")
            if not isinstance(v, str) or not v.strip():
                raise SceneError(f"{p}.attributes.{k}: expected a non-empty string")
        fp = _req(d, "footprint", p)
        if not isinstance(fp, list) or len(fp) < 3:
            raise SceneError(f"{p}.footprint: expected at least 3 vertices")
        poly = []
        for j, v in enumerate(fp):
            if not isinstance(v, (list, tuple)) or len(v) != 2:
                raise SceneError(f"{p}.footprint[{j}]: expected [x, y]")
            poly.append((_num(v[0], f"{p}.footprint[{j}][0]"), _num(v[1], f"{p}.footprint[{j}][1]")))
        if not _is_convex(poly):
            raise SceneError(f"{p}.footprint: polygon must be convex")
        for x, y in poly:
            if not (xmin <= x <= xmax and ymin <= y <= ymax):
                raise SceneError(f"{p}.footprint: vertex ({x}, {y}) outside scene bounds")
        base_z = _num(_req(d, "base_z", p), f"{p}.base_z")
        top_z = _num(_req(d, "top_z", p), f"{p}.top_z")
        if top_z <= base_z:
            raise SceneError(f"{p}.top_z: must exceed base_z")
        hint = d.get("room_hint")
        if hint is not None and not isinstance(hint, str):
            raise SceneError(f"{p}.room_hint: expected a string")
        instances.append(
            GroundTruthInstance(iid, cat.strip(), tuple(poly), base_z, top_z, dict(attrs), hint)
        )

    s = _obj(_req(doc, "spawn", "scene"), "scene.spawn")
    sx, sy = _num(_req(s, "x", "scene.spawn"), "scene.spawn.x"), _num(_req(s, "y", "scene.spawn"), "scene.spawn.y")
    heading = _num(_req(s, "heading_deg", "scene.spawn"), "scene.spawn.heading_deg")
    if not (xmin <= sx <= xmax and ymin <= sy <= ymax):
        raise SceneError("scene.spawn: outside scene bounds")
    return Scene(bounds, tuple(walls), tuple(instances), (sx, sy, _snap_heading(math.radians(heading))))


def scene_to_dict(scene: Scene) -> dict:
    walls = []
    for w in scene.walls:
        d = {"x1": w.x1, "y1": w.y1, "x2": w.x2, "y2": w.y2, "height": w.height}
        if w.base:
            d["base"] = w.base
        walls.append(d)
    instances = []
    for inst in scene.instances:
        d = {
            "id": inst.id,
            "category": inst.category,
            "attributes": dict(inst.attributes),
            "footprint": [list(v) for v in inst.footprint],
            "base_z": inst.base_z,
            "top_z": inst.top_z,
        }
        if inst.room_hint is not None:
            d["room_hint"] = inst.room_hint
        instances.append(d)
    xmin, ymin, xmax, ymax = scene.bounds
    return {
        "bounds": {"xmin": xmin, "ymin": ymin, "xmax": xmax, "ymax": ymax},
        "walls": walls,
        "instances": instances,
        "spawn": {"x": scene.spawn[0], "y": scene.spawn[1], "heading_deg": math.degrees(scene.spawn[2])},
    }


def load_scene(document: dict | str | Path) -> Scene:
    """Build a validated Scene from a parsed document or a JSON file path."""
    if isinstance(document, (str, Path)):
        try:
            document = json.loads(Path(document).read_text())
        except json.JSONDecodeError as exc:
            raise SceneError(f"scene: invalid JSON ({exc})") from exc
    return scene_from_dict(document)


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# sensing


def _subtract(lo: float, hi: float, covered: list[tuple[float, float]]) -> list[tuple[float, float]]:
    parts = [(lo, hi)]
    for c_lo, c_hi in covered:
        nxt = []
        for a, b in parts:
            if c_hi <= a or c_lo >= b:
                nxt.append((a, b))
                continue
            if a < c_lo:
                nxt.append((a, c_lo))
            if c_hi < b:
                nxt.append((c_hi, b))
        parts = nxt
    return [(a, b) for a, b in parts if b - a > 1e-9]


def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1] + 1e-12:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def ray_hits(scene: Scene, origin: np.ndarray, theta: np.ndarray, max_range: float) -> tuple[np.ndarray, np.ndarray]:
    """Distances along each ray to every edge (``inf`` where missed); shape (rays, edges)."""
    e = scene.edges
    dx, dy = np.cos(theta)[:, None], np.sin(theta)[:, None]
    sx, sy = (e["bx"] - e["ax"])[None, :], (e["by"] - e["ay"])[None, :]
    wx, wy = (e["ax"] - origin[0])[None, :], (e["ay"] - origin[1])[None, :]
    denom = dx * sy - dy * sx
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * sy - wy * sx) / denom
        u = (wx * dy - wy * dx) / denom
    ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (t <= max_range) & (u >= -1e-9) & (u <= 1 + 1e-9)
    return np.where(ok, t, np.inf), ok


def render_depth(scene: Scene, state: AgentState, sensor: SensorConfig = SensorConfig()) -> DepthImage:
    """Cast one ray per column against walls and instance footprints."""
    e = scene.edges
    theta = state.heading + sensor.column_angles()
    t, ok = ray_hits(scene, np.array([state.x, state.y]), theta, sensor.max_range)
    ranges = np.full(sensor.width, np.inf)
    cols, rngs, zlos, zhis, kinds, owners = [], [], [], [], [], []
    z_full = scene.z_top
    kind_l, owner_l = e["kind"].tolist(), e["owner"].tolist()
    zlo_l, zhi_l = e["zlo"].tolist(), e["zhi"].tolist()
    order = np.argsort(t, axis=1, kind="stable")
    t_sorted = np.take_along_axis(t, order, axis=1)
    n_hit = ok.sum(axis=1).tolist()
    for c in range(sensor.width):
        if n_hit[c] == 0:
            continue
        covered: list[tuple[float, float]] = []
        seen_inst: set[int] = set()
        hit = math.inf
        for k, r in zip(order[c, :n_hit[c]].tolist(), t_sorted[c, :n_hit[c]].tolist()):
            kind, owner = kind_l[k], owner_l[k]
            if kind == INSTANCE:
                if owner in seen_inst:
                    continue
                seen_inst.add(owner)
            lo, hi = zlo_l[k], zhi_l[k]
            if hit == math.inf and lo < BODY_HEIGHT:
                hit = r
            for a, b in _subtract(lo, hi, covered):
                cols.append(c)
                rngs.append(r)
                zlos.append(a)
                zhis.append(b)
                kinds.append(kind)
                owners.append(owner)
            covered = _merge(covered + [(lo, hi)])
            if covered[0][0] <= 0.0 and covered[0][1] >= z_full:
                break
        ranges[c] = hit
    return DepthImage(
        ranges=ranges,
        sensor=sensor,
        pose=(state.x, state.y, state.heading),
        surf_col=np.asarray(cols, dtype=int),
        surf_range=np.asarray(rngs, dtype=float),
        surf_zlo=np.asarray(zlos, dtype=float),
        surf_zhi=np.asarray(zhis, dtype=float),
        surf_kind=np.asarray(kinds, dtype=int),
        surf_owner=np.asarray(owners, dtype=int),
    )


# ---------------------------------------------------------------------------
# motion


def _point_segment_distance(px, py, ax, ay, bx, by):
    sx, sy = bx - ax, by - ay
    len2 = sx * sx + sy * sy
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(len2 > 0, ((px - ax) * sx + (py - ay) * sy) / len2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    return np.hypot(px - (ax + u * sx), py - (ay + u * sy))


def segment_distances(p0: np.ndarray, p1: np.ndarray, ax, ay, bx, by) -> np.ndarray:
    """Distance between segment p0-p1 and each segment a-b."""
    def orient(ox, oy, px, py, qx, qy):
        return (px - ox) * (qy - oy) - (py - oy) * (qx - ox)

    o1 = orient(p0[0], p0[1], p1[0], p1[1], ax, ay)
    o2 = orient(p0[0], p0[1], p1[0], p1[1], bx, by)
    o3 = orient(ax, ay, bx, by, p0[0], p0[1])
    o4 = orient(ax, ay, bx, by, p1[0], p1[1])
    crossing = (o1 * o2 < 0) & (o3 * o4 < 0)
    d = np.minimum.reduce([
        _point_segment_distance(p0[0], p0[1], ax, ay, bx, by),
        _point_segment_distance(p1[0], p1[1], ax, ay, bx, by),
        _point_segment_distance(ax, ay, p0[0], p0[1], p1[0], p1[1]),
        _point_segment_distance(bx, by, p0[0], p0[1], p1[0], p1[1]),
    ])
    return np.where(crossing, 0.0, d)


def sweep_clearance(scene: Scene, p0: np.ndarray, p1: np.ndarray) -> float:
    """Smallest distance between the swept path p0->p1 and any blocking edge."""
    e = scene.edges
    block = e["zlo"] < BODY_HEIGHT
    if not block.any():
        return math.inf
    d = segment_distances(p0, p1, e["ax"][block], e["ay"][block], e["bx"][block], e["by"][block])
    return float(d.min())


def step_agent(scene: Scene, state: AgentState, action: Action) -> AgentState:
    """Apply one discrete action; a blocked forward still costs a step."""
    action = Action(action)
    if action is Action.STOP:
        return state
    if action is Action.TURN_LEFT:
        return replace(state, heading=state.heading + TURN_ANGLE, step_count=state.step_count + 1)
    if action is Action.TURN_RIGHT:
        return replace(state, heading=state.heading - TURN_ANGLE, step_count=state.step_count + 1)
    p0 = np.array([state.x, state.y])
    p1 = p0 + FORWARD_STEP * np.array([math.cos(state.heading), math.sin(state.heading)])
    if sweep_clearance(scene, p0, p1) < AGENT_RADIUS - 1e-9:
        return replace(state, step_count=state.step_count + 1)
    return replace(
        state,
        x=float(p1[0]),
        y=float(p1[1]),
        step_count=state.step_count + 1,
        path_length=state.path_length + FORWARD_STEP,
    )


# ---------------------------------------------------------------------------
# perception oracles


def oracle_detect(
    scene: Scene,
    depth: DepthImage,
    noise: DetectorNoise = DetectorNoise(),
    rng: np.random.Generator | None = None,
) -> list[Detection]:
    """One detection per instance whose visible mask is large enough.

    Confidence and label corruption come from ``noise``; acceptance
    thresholds are the caller's business.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    min_pixels = noise.min_pixel_fraction * depth.width * depth.height
    inst_surf = depth.surf_kind == INSTANCE
    out = []
    for k in np.unique(depth.surf_owner[inst_surf]):
        sel = inst_surf & (depth.surf_owner == k)
        mask = depth.mask(sel)
        if mask.sum() < max(min_pixels, 1):
            continue
        inst = scene.instances[int(k)]
        if noise.confidence_high > noise.confidence_low:
            conf = float(rng.uniform(noise.confidence_low, noise.confidence_high))
        else:
            conf = float(noise.confidence_low)
        proposed = inst.category
        if noise.flip_prob > 0 and inst.category in noise.confusion and rng.random() < noise.flip_prob:
            proposed = noise.confusion[inst.category]
        out.append(
            Detection(
                instance_id=inst.id,
                proposed_category=proposed,
                confidence=min(max(conf, 0.0), 1.0),
                mask=mask,
                is_coco=lexicon.is_coco(proposed),
                points=depth.points(sel),
            )
        )
    return out


def oracle_vqa_category(
    scene: Scene,
    instance_id: str,
    proposed_category: str,
    *,
    mask_pixels: int | None = None,
    noise: CategoryVqaNoise = CategoryVqaNoise(),
) -> float:
    """P(instance belongs to ``proposed_category``) as a yes/no VLM would report it."""
    inst = scene.instance(instance_id)
    if mask_pixels is not None and mask_pixels < noise.ambiguity_pixels:
        return 0.5
    same = lexicon.canonical_category(proposed_category) == lexicon.canonical_category(inst.category)
    p = 1.0 if same else 0.0
    return (1.0 - noise.blend) * p + noise.blend * 0.5


def oracle_vqa_attribute(
    scene: Scene,
    instance_id: str,
    question,
    noise: AttributeVqaNoise = AttributeVqaNoise(),
    rng: np.random.Generator | None = None,
) -> int:
    """Integer 0..15 judging an attribute claim; 13 true, 2 false, 7 unknowable."""
    inst = scene.instance(instance_id)
    if question.atype not in ATTRIBUTE_KEYS:
        raise ValueError(f"unsupported attribute type {question.atype!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    if noise.unknown_prob > 0 and rng.random() < noise.unknown_prob:
        return SCORE_UNKNOWN
    truth = inst.attributes.get(question.atype)
    if truth is None:
        score = SCORE_UNKNOWN
    else:
        asked_value = getattr(question, "value", None) or question.text
        asked = lexicon.attribute_words(asked_value, question.atype)
        have = lexicon.attribute_words(truth, question.atype)
        if asked and have:
            match = asked <= have
        else:
            match = lexicon.normalize(truth) in lexicon.normalize(asked_value)
        score = SCORE_YES if match else SCORE_NO
    if noise.max_offset:
        score += int(rng.integers(-noise.max_offset, noise.max_offset + 1))
    return int(min(max(score, 0), 15))

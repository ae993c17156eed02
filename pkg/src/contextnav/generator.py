"""Procedural multi-room scenes with a described target, its context and distractors."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .goal import GoalSpec, emit_goal_json, ingest_goal_json, render_caption
from .groundtruth import GroundTruth
from .mapping import record_from_instance, room_count, segment_rooms
from .scene import GroundTruthInstance, Scene, Wall, _snap_heading, save_scene
from .verification import room_filter, verify_extrinsic

WALL_HEIGHT = 2.6
LINTEL_BASE = 2.05
OFFSET = 0.025  # walls sit on grid cell centers

# category -> (length, depth, top_z, hugs a wall)
FLOOR_ITEMS: dict[str, tuple[float, float, float, bool]] = {
    "bed": (2.0, 1.6, 0.6, True),
    "sofa": (1.9, 0.9, 0.85, True),
    "table": (1.2, 0.8, 0.75, False),
    "desk": (1.2, 0.6, 0.75, True),
    "chair": (0.5, 0.5, 0.9, False),
    "cabinet": (0.8, 0.45, 0.9, True),
    "dresser": (1.0, 0.5, 1.0, True),
    "nightstand": (0.45, 0.4, 0.55, True),
    "plant": (0.4, 0.4, 1.2, False),
    "lamp": (0.35, 0.35, 1.45, False),
    "shelf": (0.9, 0.35, 1.45, True),
    "tv": (1.0, 0.3, 1.1, True),
    "staircase": (1.0, 2.0, 1.45, True),
}
# category -> (width, base_z, top_z); mounted flush on a wall above body height
WALL_ITEMS: dict[str, tuple[float, float, float]] = {
    "picture": (0.8, 1.5, 2.1),
    "mirror": (0.5, 1.5, 2.2),
    "clock": (0.35, 1.7, 2.05),
}
COLORS = ("red", "blue", "yellow", "green", "white", "black", "brown", "gray", "orange", "purple")

# target -> [(context, rho)]; rho reads "target rho context"
TEMPLATES: dict[str, list[tuple[str, str]]] = {
    "picture": [("cabinet", "above"), ("dresser", "above"), ("sofa", "above"), ("staircase", "near"),
                ("plant", "near"), ("lamp", "near"), ("table", "above")],
    "chair": [("table", "near"), ("desk", "near"), ("plant", "near"), ("lamp", "left"), ("shelf", "front")],
    "cabinet": [("picture", "below"), ("mirror", "below"), ("plant", "near"), ("lamp", "near")],
    "plant": [("sofa", "near"), ("chair", "near"), ("tv", "near"), ("clock", "below")],
    "lamp": [("sofa", "near"), ("bed", "near"), ("nightstand", "near"), ("desk", "near")],
}


class GenerationError(RuntimeError):
    """Placement kept failing; try another seed."""


@dataclass(frozen=True)
class GenConfig:
    rooms: int = 2
    distractors: int = 1
    distractor_kind: str = "context"  # context | attribute
    max_relations: int = 2
    fillers: tuple[int, int] = (1, 2)
    room_size: tuple[float, float] = (3.5, 4.5)
    door_width: tuple[float, float] = (0.9, 1.0)
    success_radius: float = 0.25
    max_attempts: int = 60
    targets: tuple[str, ...] = tuple(TEMPLATES)


@dataclass
class GeneratedEpisode:
    scene: Scene
    goal: GoalSpec
    info: dict = field(default_factory=dict)

    def write(self, out_dir: str | Path, stem: str = "episode") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        sp, gp = out / f"{stem}_scene.json", out / f"{stem}_goal.json"
        save_scene(self.scene, sp)
        gp.write_text(json.dumps(emit_goal_json(self.goal), indent=1, sort_keys=True) + "\n")
        (out / f"{stem}_info.json").write_text(json.dumps(self.info, indent=1, sort_keys=True) + "\n")
        return sp, gp


def _q(v: float) -> float:
    """Snap to the 5 cm lattice (kills float noise so files are stable)."""
    return round(round(v / 0.05) * 0.05, 4)


@dataclass
class _Room:
    index: int
    x0: float
    y0: float
    x1: float
    y1: float
    doors: list = field(default_factory=list)  # (axis, coord, lo, hi)

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return self.x0 + margin <= x <= self.x1 - margin and self.y0 + margin <= y <= self.y1 - margin


class _Builder:
    def __init__(self, rng: np.random.Generator, cfg: GenConfig):
        self.rng = rng
        self.cfg = cfg
        self.walls: list[Wall] = []
        self.rooms: list[_Room] = []
        self.items: list[dict] = []
        self.keepout: list[tuple[float, float, float, float]] = []

    # -- layout ---------------------------------------------------------
    def layout(self) -> None:
        n = self.cfg.rooms
        cols, rows = {1: (1, 1), 2: (2, 1), 3: (3, 1), 4: (2, 2)}[n]
        lo, hi = self.cfg.room_size
        widths = [_q(self.rng.uniform(lo, hi)) for _ in range(cols)]
        heights = [_q(self.rng.uniform(lo, hi)) for _ in range(rows)]
        xs = [OFFSET]
        for w in widths:
            xs.append(round(xs[-1] + w, 4))
        ys = [OFFSET]
        for h in heights:
            ys.append(round(ys[-1] + h, 4))
        for r in range(rows):
            for c in range(cols):
                self.rooms.append(_Room(len(self.rooms), xs[c], ys[r], xs[c + 1], ys[r + 1]))
        X0, X1, Y0, Y1 = xs[0], xs[-1], ys[0], ys[-1]
        for seg in ((X0, Y0, X1, Y0), (X1, Y0, X1, Y1), (X1, Y1, X0, Y1), (X0, Y1, X0, Y0)):
            self.walls.append(Wall(*seg, height=WALL_HEIGHT))
        for k in range(1, cols):
            for r in range(rows):
                self._wall_with_door("x", xs[k], ys[r], ys[r + 1], r * cols + k - 1, r * cols + k, door=True)
        for r in range(1, rows):
            for c in range(cols):
                self._wall_with_door("y", ys[r], xs[c], xs[c + 1], (r - 1) * cols + c, r * cols + c, door=(c == 0))
        self.bounds = (X0, Y0, X1, Y1)

    def _wall_with_door(self, axis: str, coord: float, a: float, b: float, ra: int, rb: int, door: bool) -> None:
        def seg(u0, u1, base=0.0):
            if axis == "x":
                return Wall(coord, u0, coord, u1, height=WALL_HEIGHT, base=base)
            return Wall(u0, coord, u1, coord, height=WALL_HEIGHT, base=base)

        if not door:
            self.walls.append(seg(a, b))
            return
        dw = _q(self.rng.uniform(*self.cfg.door_width))
        lo, hi = a + 0.7 + dw / 2, b - 0.7 - dw / 2
        mid = _q(self.rng.uniform(lo, hi))
        d0, d1 = round(mid - dw / 2, 4), round(mid + dw / 2, 4)
        self.walls += [seg(a, d0), seg(d1, b), seg(d0, d1, base=LINTEL_BASE)]
        for r in (ra, rb):
            self.rooms[r].doors.append((axis, coord, d0, d1))
        # keep a corridor through the doorway clear of furniture
        if axis == "x":
            self.keepout.append((coord - 1.0, d0 - 0.3, coord + 1.0, d1 + 0.3))
        else:
            self.keepout.append((d0 - 0.3, coord - 1.0, d1 + 0.3, coord + 1.0))

    # -- placement ------------------------------------------------------
    def _rect_free(self, rect, mounted: bool) -> bool:
        x0, y0, x1, y1 = rect
        for k in self.keepout:
            if not mounted and x0 < k[2] and x1 > k[0] and y0 < k[3] and y1 > k[1]:
                return False
        for it in self.items:
            gap = 0.25 if (mounted and it["mounted"]) else (0.55 if not (mounted or it["mounted"]) else -1.0)
            if gap < 0:
                # floor item vs wall item: keep the floor clear in front of mounted things
                gap = 0.45
            ix0, iy0, ix1, iy1 = it["rect"]
            if x0 < ix1 + gap and x1 > ix0 - gap and y0 < iy1 + gap and y1 > iy0 - gap:
                return False
        return True

    def _door_span_clear(self, room: _Room, side: str, u0: float, u1: float) -> bool:
        for axis, coord, d0, d1 in room.doors:
            on_side = (
                (side == "W" and axis == "x" and abs(coord - room.x0) < 1e-6)
                or (side == "E" and axis == "x" and abs(coord - room.x1) < 1e-6)
                or (side == "S" and axis == "y" and abs(coord - room.y0) < 1e-6)
                or (side == "N" and axis == "y" and abs(coord - room.y1) < 1e-6)
            )
            if on_side and u0 < d1 + 0.4 and u1 > d0 - 0.4:
                return False
        return True

    def try_place(self, category: str, room: _Room, color: str, role: str, near=None, near_range=(0.0, 99.0),
                  tries: int = 80) -> dict | None:
        rng = self.rng
        mounted = category in WALL_ITEMS
        for _ in range(tries):
            if mounted:
                width, base, top = WALL_ITEMS[category]
                depth = 0.04
                along_gap = 0.005
            else:
                width, depth, top, hugs = FLOOR_ITEMS[category]
                base = 0.0
                along_gap = 0.02 if hugs else None
            if mounted or along_gap is not None:
                side = ("W", "E", "S", "N")[int(rng.integers(4))]
                if side in ("W", "E"):
                    lo_u, hi_u = room.y0 + 0.3 + width / 2, room.y1 - 0.3 - width / 2
                else:
                    lo_u, hi_u = room.x0 + 0.3 + width / 2, room.x1 - 0.3 - width / 2
                if lo_u >= hi_u:
                    continue
                u = _q(rng.uniform(lo_u, hi_u))
                if not self._door_span_clear(room, side, u - width / 2, u + width / 2):
                    continue
                if side == "W":
                    rect = (room.x0 + along_gap, u - width / 2, room.x0 + along_gap + depth, u + width / 2)
                elif side == "E":
                    rect = (room.x1 - along_gap - depth, u - width / 2, room.x1 - along_gap, u + width / 2)
                elif side == "S":
                    rect = (u - width / 2, room.y0 + along_gap, u + width / 2, room.y0 + along_gap + depth)
                else:
                    rect = (u - width / 2, room.y1 - along_gap - depth, u + width / 2, room.y1 - along_gap)
            else:
                w, d = (width, depth) if rng.random() < 0.5 else (depth, width)
                cx = _q(rng.uniform(room.x0 + 0.6 + w / 2, room.x1 - 0.6 - w / 2))
                cy = _q(rng.uniform(room.y0 + 0.6 + d / 2, room.y1 - 0.6 - d / 2))
                rect = (cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2)
            rect = tuple(round(v, 4) for v in rect)
            c = np.array([(rect[0] + rect[2]) / 2, (rect[1] + rect[3]) / 2])
            if near is not None:
                dist = min(np.linalg.norm(c - p) for p in near)
                if not near_range[0] <= dist <= near_range[1]:
                    continue
            if not self._rect_free(rect, mounted):
                continue
            item = {
                "category": category,
                "rect": rect,
                "base": base,
                "top": top,
                "mounted": mounted,
                "room": room.index,
                "color": color,
                "role": role,
                "center": c,
            }
            self.items.append(item)
            return item
        return None

    def scene(self, spawn) -> Scene:
        instances = []
        for k, it in enumerate(self.items):
            x0, y0, x1, y1 = it["rect"]
            instances.append(
                GroundTruthInstance(
                    id=f"obj{k:02d}",
                    category=it["category"],
                    footprint=((x0, y0), (x1, y0), (x1, y1), (x0, y1)),
                    base_z=it["base"],
                    top_z=it["top"],
                    attributes={"color": it["color"]},
                    room_hint=f"room{it['room']}",
                )
            )
        return Scene(self.bounds, tuple(self.walls), tuple(instances), spawn)


def _place_spawn(b: _Builder, room: _Room, gt_scene: Scene) -> tuple[float, float, float] | None:
    from .groundtruth import clearance

    for _ in range(200):
        x = _q(b.rng.uniform(room.x0 + 0.5, room.x1 - 0.5)) + OFFSET
        y = _q(b.rng.uniform(room.y0 + 0.5, room.y1 - 0.5)) + OFFSET
        if any(k[0] <= x <= k[2] and k[1] <= y <= k[3] for k in b.keepout):
            continue
        if clearance(gt_scene, np.array([[x, y]]))[0] >= 0.45:
            return (round(x, 4), round(y, 4), _snap_heading(math.radians(30 * int(b.rng.integers(12)))))
    return None


def _verify_layout(scene: Scene, goal: GoalSpec, roles: dict[str, str], rooms: int, radius: float) -> str | None:
    """Self-check on the ground-truth map; returns a failure reason or None."""
    gt = GroundTruth(scene)
    segment_rooms(gt.grids)
    if room_count(gt.grids) != rooms:
        return f"room count {room_count(gt.grids)} != {rooms}"
    recs = {inst.id: record_from_instance(inst, k + 1) for k, inst in enumerate(scene.instances)}
    ctx = [recs[i.id] for i in scene.instances if i.category in goal.context_categories]
    for inst in scene.instances:
        if inst.category != goal.target_category:
            continue
        res = room_filter(recs[inst.id], ctx, gt.grids, goal)
        ok = res is not None and res.complete and verify_extrinsic(res, gt.grids).confirmed
        want = roles[inst.id] in ("target", "attribute-distractor")
        if ok != want:
            return f"{roles[inst.id]} {inst.id} extrinsic={ok}"
    target = next(i for i in scene.instances if roles[i.id] == "target")
    ell = gt.shortest_path(scene.spawn[:2], target, radius)
    if not math.isfinite(ell):
        return "target not approachable"
    for inst in scene.instances:
        if roles[inst.id] == "target":
            continue
        if inst.category == target.category and \
                float(np.linalg.norm(inst.centroid - target.centroid)) < 2 * radius + 0.5:
            return "distractor too close to target"
    return None


def generate_scene(seed: int, cfg: GenConfig = GenConfig()) -> GeneratedEpisode:
    """Deterministic scene + goal for ``seed``; retries placement before giving up."""
    if cfg.rooms < 1 or cfg.rooms > 4:
        raise ValueError("rooms must be in 1..4")
    if cfg.distractor_kind not in ("context", "attribute"):
        raise ValueError("distractor_kind must be 'context' or 'attribute'")
    last = "no attempt"
    for attempt in range(cfg.max_attempts):
        rng = np.random.default_rng([seed, attempt])
        out = _attempt(rng, cfg)
        if isinstance(out, GeneratedEpisode):
            out.info["seed"] = seed
            out.info["attempt"] = attempt
            return out
        last = out
    raise GenerationError(f"seed {seed}: placement failed ({last})")


def _attempt(rng: np.random.Generator, cfg: GenConfig):
    b = _Builder(rng, cfg)
    b.layout()
    target_cat = cfg.targets[int(rng.integers(len(cfg.targets)))]
    templates = list(TEMPLATES[target_cat])
    rng.shuffle(templates)
    n_rel = int(rng.integers(1, cfg.max_relations + 1))
    chosen, used = [], set()
    for ctx, rho in templates:
        if ctx in used or ctx == target_cat:
            continue
        chosen.append((ctx, rho))
        used.add(ctx)
        if len(chosen) == n_rel:
            break
    color = COLORS[int(rng.integers(len(COLORS)))]
    t_room = b.rooms[int(rng.integers(len(b.rooms)))]
    target = b.try_place(target_cat, t_room, color, "target")
    if target is None:
        return "target placement"
    for ctx, rho in chosen:
        rng_range = (0.9, 1.6) if rho == "near" else (0.9, 2.2)
        c = b.try_place(ctx, t_room, COLORS[int(rng.integers(len(COLORS)))], "context",
                        near=[target["center"]], near_range=rng_range)
        if c is None:
            return f"context {ctx}"
    ctx_centers = [it["center"] for it in b.items if it["role"] == "context"]
    others = [r for r in b.rooms if r.index != t_room.index]
    for k in range(cfg.distractors):
        if cfg.distractor_kind == "context":
            if not others:
                return "no room for a context distractor"
            room = others[k % len(others)]
            d = b.try_place(target_cat, room, color, "distractor", near=ctx_centers, near_range=(3.5, 99.0))
        else:
            other_colors = [c for c in COLORS if c != color]
            dcol = other_colors[int(rng.integers(len(other_colors)))]
            d = b.try_place(target_cat, t_room, dcol, "attribute-distractor", near=ctx_centers,
                            near_range=(0.9, 1.6))
        if d is None:
            return "distractor placement"
    goal_cats = {target_cat} | used
    filler_pool = [c for c in list(FLOOR_ITEMS) + list(WALL_ITEMS) if c not in goal_cats]
    for room in b.rooms:
        for _ in range(int(rng.integers(cfg.fillers[0], cfg.fillers[1] + 1))):
            cat = filler_pool[int(rng.integers(len(filler_pool)))]
            b.try_place(cat, room, COLORS[int(rng.integers(len(COLORS)))], "filler", tries=20)

    proto = b.scene((0.0, 0.0, 0.0))
    spawn_rooms = others if others else b.rooms
    spawn = _place_spawn(b, spawn_rooms[int(rng.integers(len(spawn_rooms)))], proto)
    if spawn is None:
        return "spawn"
    scene = b.scene(spawn)
    goal = ingest_goal_json({
        "target": target_cat,
        "attributes": {"color": color},
        "groups": {c: [c] for c in sorted(used)},
        "relations": [{"ref": c, "tgt": target_cat, "rtype": r} for c, r in chosen],
    })
    goal = ingest_goal_json({**emit_goal_json(goal), "caption": render_caption(goal)})
    roles = {inst.id: it["role"] for inst, it in zip(scene.instances, b.items)}
    reason = _verify_layout(scene, goal, roles, len(b.rooms), cfg.success_radius)
    if reason is not None:
        return reason
    info = {
        "roles": roles,
        "target_id": next(i for i, r in roles.items() if r == "target"),
        "rooms": len(b.rooms),
        "distractor_kind": cfg.distractor_kind,
        "caption": goal.raw_caption,
    }
    return GeneratedEpisode(scene, goal, info)


def build_suite(out_dir: str | Path, n: int = 50, seed0: int = 0, rooms=(2, 4), distractors=(1, 2),
                distractor_kind: str = "context", profile: str = "coin") -> Path:
    """Write ``n`` generated episodes plus a batch manifest; returns the manifest path.

    Room and distractor counts cycle through their inclusive ranges so every
    combination appears; episode ``k`` uses generator seed ``seed0 + k``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    room_opts = list(range(rooms[0], rooms[1] + 1))
    dist_opts = list(range(distractors[0], distractors[1] + 1))
    manifest = []
    for k in range(n):
        cfg = GenConfig(rooms=room_opts[k % len(room_opts)],
                        distractors=dist_opts[(k // len(room_opts)) % len(dist_opts)],
                        distractor_kind=distractor_kind)
        ep = generate_scene(seed0 + k, cfg)
        stem = f"ep{k:03d}"
        ep.write(out, stem)
        manifest.append({
            "episode_id": stem,
            "scene": f"{stem}_scene.json",
            "goal": f"{stem}_goal.json",
            "profile": profile,
            "seed": seed0 + k,
            "target_id": ep.info["target_id"],
        })
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path

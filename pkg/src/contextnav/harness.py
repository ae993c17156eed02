"""Episode orchestration, metrics and batch runs."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import lexicon
from .exploration import (
    ExplorationExhausted,
    ExplorationState,
    Frontier,
    LocalPlanner,
    ReplanNeeded,
    SimilarityConfig,
    apply_room_override,
    extract_frontiers,
    lattice_approach,
    oracle_similarity,
    rank_frontiers,
    update_value_map,
)
from .goal import GoalError, GoalSpec, ingest_goal_json, parse_caption
from .groundtruth import GroundTruth, reach_distance, same_category
from .mapping import (
    GridStack,
    InstanceStore,
    RansacConfig,
    VerificationState,
    extract_wall_planes,
    gate_wall_points,
    integrate_depth,
    mark_hit,
    rasterize_walls,
    record_from_instance,
    segment_rooms,
    trace_rays,
)
from .scene import (
    FORWARD_STEP,
    Action,
    AgentState,
    AttributeVqaNoise,
    CategoryVqaNoise,
    DepthImage,
    Detection,
    DetectorNoise,
    Scene,
    SceneError,
    SensorConfig,
    load_scene,
    oracle_detect,
    oracle_vqa_attribute,
    oracle_vqa_category,
    render_depth,
    step_agent,
)
from .verification import (
    FrameRecord,
    TargetRoomUnknown,
    room_filter,
    verify_extrinsic,
    verify_intrinsic,
)

OPEN_VOCAB_THRESHOLD = 0.45
COCO_THRESHOLD = 0.8
VQA_THRESHOLD = 0.6

PROFILES: dict[str, tuple[float, int]] = {
    "coin": (0.25, 500),
    "instancenav": (1.0, 1000),
}
ABLATIONS = ("value-map", "category-verify", "intrinsic", "extrinsic")
VERDICTS = ("target", "distractor", "off-target", "time-out")

EXTRINSIC_FAILURES = 3  # failed checks before a candidate is discarded
FRONTIER_PERIOD = 4  # steps between frontier re-ranking
EXTRINSIC_PERIOD = 3  # steps between relation checks of the same candidate
ROOM_PERIOD = 4  # steps between room re-segmentation when walls are unchanged
LATTICE_RANGE = 1.2  # switch from the grid planner to the exact approach search
BUMP_LIMIT = 2  # consecutive blocked moves before the waypoint is abandoned


class ConfigurationError(ValueError):
    """Episode inputs could not be loaded or are inconsistent."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class NoiseConfig:
    detector: DetectorNoise = DetectorNoise()
    category_vqa: CategoryVqaNoise = CategoryVqaNoise()
    attribute_vqa: AttributeVqaNoise = AttributeVqaNoise()
    similarity_sigma: float = 0.0

    @classmethod
    def from_dict(cls, doc: dict | None) -> NoiseConfig:
        doc = dict(doc or {})
        unknown = set(doc) - {"detector", "category_vqa", "attribute_vqa", "similarity_sigma"}
        if unknown:
            raise ConfigurationError(f"noise: unknown keys {sorted(unknown)}")
        try:
            return cls(
                detector=DetectorNoise(**doc.get("detector", {})),
                category_vqa=CategoryVqaNoise(**doc.get("category_vqa", {})),
                attribute_vqa=AttributeVqaNoise(**doc.get("attribute_vqa", {})),
                similarity_sigma=float(doc.get("similarity_sigma", 0.0)),
            )
        except TypeError as exc:
            raise ConfigurationError(f"noise: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "detector": asdict(self.detector),
            "category_vqa": asdict(self.category_vqa),
            "attribute_vqa": asdict(self.attribute_vqa),
            "similarity_sigma": self.similarity_sigma,
        }


@dataclass(frozen=True)
class EpisodeConfig:
    scene: str
    goal: str | None = None
    caption: str | None = None
    profile: str = "coin"
    max_steps: int | None = None  # profile default when unset
    success_radius: float | None = None
    seed: int = 0
    noise: NoiseConfig = NoiseConfig()
    ablate: str | None = None
    target_id: str | None = None  # ground-truth goal instance; resolved from the scene when unset
    episode_id: str = ""

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ConfigurationError("max_steps must be positive")
        if self.success_radius is not None and self.success_radius <= 0:
            raise ConfigurationError("success_radius must be positive")
        if self.ablate is not None and self.ablate not in ABLATIONS:
            raise ConfigurationError(f"unknown ablation {self.ablate!r}")
        if (self.goal is None) == (self.caption is None):
            raise ConfigurationError("exactly one of goal and caption is required")

    @property
    def radius(self) -> float:
        return self.success_radius if self.success_radius is not None else PROFILES[self.profile][0]

    @property
    def budget(self) -> int:
        return self.max_steps if self.max_steps is not None else PROFILES[self.profile][1]

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path | None = None) -> EpisodeConfig:
        if not isinstance(doc, dict):
            raise ConfigurationError("episode config must be an object")
        doc = dict(doc)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"episode config: unknown keys {sorted(unknown)}")
        if "scene" not in doc:
            raise ConfigurationError("episode config: missing 'scene'")
        base = Path(base_dir) if base_dir is not None else None
        for key in ("scene", "goal"):
            if doc.get(key) is not None and base is not None and not Path(doc[key]).is_absolute():
                doc[key] = str(base / doc[key])
        doc["noise"] = NoiseConfig.from_dict(doc.get("noise"))
        return cls(**doc)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["noise"] = self.noise.to_dict()
        return d


@dataclass
class EpisodeResult:
    episode_id: str
    success: int
    steps: int
    path_length: float
    shortest_path: float
    verdict: str
    stop_instance: str | None
    target_id: str
    trajectory: list[tuple[float, float, float]]
    trace: list[dict] = field(default_factory=list)
    profile: str = "coin"
    success_radius: float = 0.25
    max_steps: int = 500
    grids: GridStack | None = field(default=None, repr=False, compare=False)  # final agent map, not serialized

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "success": self.success,
            "steps": self.steps,
            "path_length": round(self.path_length, 6),
            "shortest_path": round(self.shortest_path, 6) if math.isfinite(self.shortest_path) else None,
            "verdict": self.verdict,
            "stop_instance": self.stop_instance,
            "target_id": self.target_id,
            "profile": self.profile,
            "success_radius": self.success_radius,
            "max_steps": self.max_steps,
            "trajectory": [[round(v, 6) for v in p] for p in self.trajectory],
            "trace": self.trace,
        }

    @classmethod
    def from_json(cls, doc: dict) -> EpisodeResult:
        sp = doc.get("shortest_path")
        return cls(
            episode_id=doc.get("episode_id", ""),
            success=int(doc["success"]),
            steps=int(doc["steps"]),
            path_length=float(doc["path_length"]),
            shortest_path=math.inf if sp is None else float(sp),
            verdict=doc["verdict"],
            stop_instance=doc.get("stop_instance"),
            target_id=doc.get("target_id", ""),
            trajectory=[tuple(p) for p in doc.get("trajectory", [])],
            trace=list(doc.get("trace", [])),
            profile=doc.get("profile", "coin"),
            success_radius=float(doc.get("success_radius", 0.25)),
            max_steps=int(doc.get("max_steps", 500)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")


def load_result(path: str | Path) -> EpisodeResult:
    return EpisodeResult.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# metrics


def compute_metrics(results: Sequence[EpisodeResult]) -> dict[str, float]:
    """SR and SPL in percent; SPL = mean of S * l / max(p, l)."""
    results = list(results)
    if not results:
        raise ValueError("no episode results")
    sr, spl = 0.0, 0.0
    for r in results:
        if not r.shortest_path > 0:
            raise ValueError(f"episode {r.episode_id!r}: shortest path must be positive")
        if r.success:
            sr += 1.0
            spl += r.shortest_path / max(r.path_length, r.shortest_path)
    n = len(results)
    return {"SR": 100.0 * sr / n, "SPL": 100.0 * spl / n}


def summarize(results: Sequence[EpisodeResult]) -> dict:
    """Metrics plus verdict counts and mean path length, stable for byte comparison."""
    m = compute_metrics(results)
    verdicts = Counter(r.verdict for r in results)
    return {
        "episodes": len(results),
        "SR": round(m["SR"], 6),
        "SPL": round(m["SPL"], 6),
        "mean_path_length": round(float(np.mean([r.path_length for r in results])), 6),
        "verdicts": {v: verdicts.get(v, 0) for v in VERDICTS},
    }


# ---------------------------------------------------------------------------
# perception


class Perception:
    """Oracle bundle bound to one scene; the only component that reads ground truth."""

    def __init__(self, scene: Scene, goal: GoalSpec, noise: NoiseConfig, seed: int,
                 sensor: SensorConfig = SensorConfig()):
        self.scene = scene
        self.goal = goal
        self.noise = noise
        self.sensor = sensor
        self._det_rng = np.random.default_rng([seed, 11])
        self._vqa_rng = np.random.default_rng([seed, 12])
        self._sim_rng = np.random.default_rng([seed, 13])
        self._sim_cfg = SimilarityConfig(noise_sigma=noise.similarity_sigma)

    def observe(self, state: AgentState) -> DepthImage:
        return render_depth(self.scene, state, self.sensor)

    def detect(self, depth: DepthImage) -> list[Detection]:
        return oracle_detect(self.scene, depth, self.noise.detector, self._det_rng)

    def category_prob(self, det: Detection) -> float:
        return oracle_vqa_category(self.scene, det.instance_id, det.proposed_category,
                                   mask_pixels=det.pixel_count, noise=self.noise.category_vqa)

    def attribute_score(self, handle, question, frame) -> int:
        # the frame is the instance as seen at that step; the oracle only needs its id
        return oracle_vqa_attribute(self.scene, frame if frame is not None else handle, question,
                                    self.noise.attribute_vqa, self._vqa_rng)

    def similarity(self, depth: DepthImage):
        return oracle_similarity(self.scene, depth, self.goal, self._sim_cfg, self._sim_rng)


def accept_detection(det: Detection, category_prob, verify_category: bool = True) -> bool:
    """Category gates: proposal confidence, then COCO confidence or the yes/no check."""
    if det.confidence < OPEN_VOCAB_THRESHOLD:
        return False
    if det.is_coco:
        return det.confidence >= COCO_THRESHOLD
    if not verify_category:
        return True
    return category_prob(det) >= VQA_THRESHOLD


# ---------------------------------------------------------------------------
# agent


@dataclass
class Candidate:
    record: int
    first_step: int
    handle: str  # oracle handle of the first sighting
    frames: list[FrameRecord] = field(default_factory=list)
    intrinsic: str = "pending"  # pending | accepted | rejected
    failures: int = 0
    checked: tuple | None = None
    checked_step: int = -10**9
    last_reason: str = ""


class ContextNavAgent:
    """Policy side of an episode: maps, verification state and action choice."""

    def __init__(self, goal: GoalSpec, perception: Perception, radius: float, seed: int,
                 ablate: str | None = None, start: AgentState | None = None):
        self.goal = goal
        self.perception = perception
        self.radius = radius
        self.ablate = ablate
        x, y = (start.x, start.y) if start is not None else (0.0, 0.0)
        self.grids = GridStack.empty(x - 1.0, y - 1.0, x + 1.0, y + 1.0)
        self.store = InstanceStore(seed)
        self.ransac = RansacConfig()
        self._ransac_rng = np.random.default_rng([seed, 21])
        self.planner = LocalPlanner()
        self.xs = ExplorationState()
        self.candidates: dict[int, Candidate] = {}
        self.handles: dict[int, Counter] = {}
        self.trace: list[dict] = []
        self.confirmed: int | None = None
        self.waypoint: Frontier | None = None
        self.blocked: list[tuple[int, int]] = []
        self.exhausted = False
        self.spin = 11
        self._ranked_at = -10**9
        self._segmented = 0  # bumped on every re-segmentation
        self._segmented_step = -10**9
        self._plan: list[Action] = []
        self._bumps: list[np.ndarray] = []
        self._bump_streak = 0
        self._prompt = {lexicon.canonical_category(c) for c in goal.prompt_categories}
        self._target = lexicon.canonical_category(goal.target_category)

    # -- bookkeeping ----------------------------------------------------
    def log(self, step: int, event: str, **kw) -> None:
        self.trace.append({"step": step, "event": event, **kw})

    def _handle(self, rid: int) -> str:
        return self.handles[rid].most_common(1)[0][0]

    # -- perception and mapping -----------------------------------------
    def perceive(self, state: AgentState, step: int) -> None:
        depth = self.perception.observe(state)
        sim = self.perception.similarity(depth)
        rays = trace_rays(self.grids, depth)
        shape = self.grids.shape
        integrate_depth(self.grids, depth, rays=rays)
        verify = self.ablate != "category-verify"
        for det in self.perception.detect(depth):
            cat = lexicon.canonical_category(det.proposed_category)
            if cat not in self._prompt:
                continue
            if not accept_detection(det, self.perception.category_prob, verify):
                continue
            rid = self.store.associate(det.points, cat, origin=(state.x, state.y))
            self.handles.setdefault(rid, Counter())[det.instance_id] += 1
            if cat == self._target:
                cols = np.flatnonzero(det.mask.any(axis=0))
                score = float(sim.values[cols].mean()) if len(cols) else 0.0
                cand = self.candidates.get(rid)
                if cand is None:
                    self.candidates[rid] = Candidate(rid, step, det.instance_id)
                    self.log(step, "candidate", record=rid)
                elif cand.intrinsic == "pending" and step > cand.first_step:
                    cand.frames.append(FrameRecord(step, score, det.instance_id))
        gated = gate_wall_points(depth.points(), depth.point_ranges(), self.ransac)
        planes = extract_wall_planes(gated, self.ransac, self._ransac_rng)
        walls_before = int(self.grids.wall.sum()) if planes else -1
        if planes:
            rasterize_walls(planes, self.grids)
        walls_changed = planes and int(self.grids.wall.sum()) != walls_before
        if step - self._segmented_step >= ROOM_PERIOD or (walls_changed and step - self._segmented_step >= 2):
            segment_rooms(self.grids)
            self._segmented += 1
            self._segmented_step = step
        update_value_map(self.grids, sim, depth, rays=rays if self.grids.shape == shape else None)

    # -- verification ---------------------------------------------------
    def verify(self, step: int) -> None:
        if self.confirmed is not None:
            return
        for rid in sorted(self.candidates):
            cand = self.candidates[rid]
            rec = self.store.get(rid)
            if rec.state == VerificationState.REJECTED:
                continue
            if cand.intrinsic == "pending":
                if self.ablate == "intrinsic":
                    cand.intrinsic = "accepted"
                else:
                    v = verify_intrinsic(self.goal, self._handle(rid), self.perception.attribute_score,
                                         cand.frames, cand.handle, force=self.exhausted)
                    if v.deferred:
                        continue
                    cand.intrinsic = "accepted" if v.accepted else "rejected"
                    self.log(step, "intrinsic", record=rid, status=cand.intrinsic,
                             bins={k: [[b.value for b in r] for r in rows] for k, rows in sorted(v.history.items())})
                if cand.intrinsic == "rejected":
                    rec.state = VerificationState.REJECTED
                    continue
            if self.ablate == "extrinsic" or not self.goal.relations:
                self._confirm(step, rid, "no extrinsic check")
                return
            if self._extrinsic(step, cand):
                return

    def _extrinsic(self, step: int, cand: Candidate) -> bool:
        rid = cand.record
        rec = self.store.get(rid)
        contexts = [r for c in sorted(self.goal.context_categories) for r in self.store.of_category(c)]
        key = (self._segmented, tuple((r.id, r.observations) for r in contexts), rec.observations, self.exhausted)
        if key == cand.checked or (step - cand.checked_step < EXTRINSIC_PERIOD and not self.exhausted):
            return False
        cand.checked_step = step
        cand.checked = key
        try:
            res = room_filter(rec, contexts, self.grids, self.goal)
        except TargetRoomUnknown:
            return False
        if res is None:
            if cand.last_reason != "room":
                cand.last_reason = "room"
                self.log(step, "extrinsic", record=rid, status="rejected", reason="no same-room context within reach")
            return False
        if not res.complete and not self.exhausted:
            return False
        out = verify_extrinsic(res, self.grids)
        contexts_kept = [c.id for c in res.contexts]
        if out.confirmed:
            self._confirm(step, rid, out.reason, binding=out.binding, contexts=contexts_kept,
                          viewpoints=out.n_viewpoints,
                          viewpoint=[round(float(v), 4) for v in out.viewpoint] if out.viewpoint is not None else None)
            return True
        if res.complete:
            cand.failures += 1
            cand.last_reason = "relations"
            self.log(step, "extrinsic", record=rid, status="failed", reason=out.reason, failures=cand.failures,
                     contexts=contexts_kept, viewpoints=out.n_viewpoints)
            if cand.failures >= EXTRINSIC_FAILURES:
                rec.state = VerificationState.REJECTED
                self.log(step, "discarded", record=rid)
        return False

    def _confirm(self, step: int, rid: int, reason: str, **kw) -> None:
        self.confirmed = rid
        self.store.get(rid).state = VerificationState.CONFIRMED
        self._plan = []
        self.planner.reset()
        self.log(step, "confirmed", record=rid, reason=reason, **kw)

    # -- acting ---------------------------------------------------------
    def act(self, state: AgentState, step: int) -> Action:
        if self.confirmed is not None:
            return self._approach(state, step)
        if self.spin > 0:
            self.spin -= 1
            return Action.TURN_LEFT
        return self._explore(state, step)

    def _rank(self, state: AgentState, step: int) -> None:
        self._ranked_at = step
        frontiers = [f for f in extract_frontiers(self.grids) if f.cell not in self.blocked]
        mode = "nearest" if self.ablate == "value-map" else "value"
        try:
            ranked = rank_frontiers(frontiers, self.grids, (state.x, state.y), mode=mode)
        except ExplorationExhausted:
            self.waypoint = None
            if not self.exhausted:
                self.exhausted = True
                self.log(step, "exhausted")
            return
        self.exhausted = False
        fresh = self.xs.override_available
        choice = apply_room_override(self.xs, self.grids, self.store, self.goal, ranked, step)
        if fresh and not self.xs.override_available:
            self.log(step, "room-override", room=choice.room)
        if self.waypoint is None or choice.cell != self.waypoint.cell:
            self.waypoint = choice

    def _explore(self, state: AgentState, step: int) -> Action:
        for _ in range(3):
            if self.waypoint is None or step - self._ranked_at >= FRONTIER_PERIOD:
                self._rank(state, step)
            if self.waypoint is None:
                self.spin = 11
                return Action.TURN_LEFT
            try:
                a = self.planner.next_action(self.grids, state, self.waypoint.point(self.grids))
            except ReplanNeeded:
                a = None
            if a is not None and a is not Action.STOP:
                return a
            self.blocked.append(self.waypoint.cell)
            self.waypoint = None
        return Action.TURN_LEFT

    def _approach(self, state: AgentState, step: int) -> Action:
        rec = self.store.get(self.confirmed)
        pts = rec.points[:, :2]
        d = float(np.min(np.hypot(pts[:, 0] - state.x, pts[:, 1] - state.y)))
        if d <= self.radius - 0.02:
            return Action.STOP
        if d > LATTICE_RANGE + self.radius:
            goal_xy = self._approach_cell(pts)
            if goal_xy is not None:
                try:
                    a = self.planner.next_action(self.grids, state, goal_xy)
                    if a is not Action.STOP:
                        return a
                except ReplanNeeded:
                    pass
        if not self._plan:
            plan = lattice_approach(state, pts, self._obstacle_cells(pts, state), self.radius,
                                    extra_points=np.array(self._bumps).reshape(-1, 2))
            if not plan:
                self.log(step, "approach-failed", distance=round(d, 4))
                return Action.STOP
            self._plan = plan
        return self._plan.pop(0)

    def _approach_cell(self, pts: np.ndarray):
        """Free cell nearest the confirmed instance, searched in a window around it."""
        g = self.grids
        reach = self.radius + 0.6
        lo = np.maximum(g.to_cell(pts.min(axis=0) - reach), 0)
        hi = np.minimum(g.to_cell(pts.max(axis=0) + reach) + 1, np.array(g.shape))
        win = g.free[lo[0]:hi[0], lo[1]:hi[1]]
        cells = np.argwhere(win) + lo
        if len(cells) == 0:
            return None
        xy = g.to_world(cells)
        d, _ = cKDTree(pts).query(xy)
        ok = d <= reach
        if not ok.any():
            return None
        return xy[ok][int(np.argmin(d[ok]))]

    def _obstacle_cells(self, target_pts: np.ndarray, state: AgentState) -> np.ndarray:
        g = self.grids
        occ = g.occupied.copy()
        tc = g.to_cell(target_pts)
        inside = (tc[:, 0] >= 0) & (tc[:, 0] < g.shape[0]) & (tc[:, 1] >= 0) & (tc[:, 1] < g.shape[1])
        occ[tc[inside, 0], tc[inside, 1]] = False
        cells = np.argwhere(occ)
        xy = g.to_world(cells)
        near = np.hypot(xy[:, 0] - state.x, xy[:, 1] - state.y) <= LATTICE_RANGE + self.radius + 1.5
        return xy[near]

    def bumped(self, state: AgentState, step: int) -> None:
        """A forward move was blocked: record the contact and give up on a waypoint that keeps causing it."""
        ahead = np.array([state.x, state.y]) + 0.3 * np.array([math.cos(state.heading), math.sin(state.heading)])
        mark_hit(self.grids, ahead)
        self._bumps.append(ahead)
        self._plan = []
        self._bump_streak += 1
        self.log(step, "bump", at=[round(float(v), 4) for v in ahead])
        if self._bump_streak >= BUMP_LIMIT and self.confirmed is None and self.waypoint is not None:
            self.blocked.append(self.waypoint.cell)
            self.waypoint = None
            self.planner.reset()
            self._bump_streak = 0

    def moved(self) -> None:
        self._bump_streak = 0


# ---------------------------------------------------------------------------
# episodes


def load_goal(cfg: EpisodeConfig) -> GoalSpec:
    try:
        if cfg.goal is not None:
            return ingest_goal_json(cfg.goal)
        return parse_caption(cfg.caption)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"goal: {exc}") from None
    except GoalError as exc:
        raise ConfigurationError(f"goal: {exc}") from None


def resolve_target(scene: Scene, goal: GoalSpec, gt: GroundTruth) -> str:
    """The instance the goal describes, judged on ground truth.

    Preference: category, attributes and relations all hold; else category
    and attributes; else category alone (lowest id first).
    """
    pool = same_category(scene, goal.target_category)
    if not pool:
        raise ConfigurationError(f"scene has no {goal.target_category!r} instance")

    def attrs_ok(inst) -> bool:
        by_type: dict[str, bool] = {}
        for q in goal.questions:
            yes = oracle_vqa_attribute(scene, inst.id, q) >= 11
            by_type[q.atype] = by_type.get(q.atype, False) or yes
        return all(by_type.values())

    def rel_ok(inst) -> bool:
        if not goal.relations:
            return True
        segment_rooms(gt.grids)
        recs = {i.id: record_from_instance(i, k + 1) for k, i in enumerate(scene.instances)}
        ctx = [recs[i.id] for i in scene.instances
               if lexicon.canonical_category(i.category) in goal.context_categories]
        try:
            res = room_filter(recs[inst.id], ctx, gt.grids, goal)
        except TargetRoomUnknown:
            return False
        return res is not None and res.complete and verify_extrinsic(res, gt.grids).confirmed

    attr = [i for i in pool if attrs_ok(i)]
    full = [i for i in attr if rel_ok(i)]
    return (full or attr or pool)[0].id


def stop_verdict(scene: Scene, target_id: str, category: str, xy, radius: float) -> tuple[str, str | None]:
    """Classify a stop position: target, distractor or off-target."""
    target = scene.instance(target_id)
    if reach_distance(scene, target, xy)[0] <= radius:
        return "target", target_id
    for inst in same_category(scene, category):
        if inst.id != target_id and reach_distance(scene, inst, xy)[0] <= radius:
            return "distractor", inst.id
    return "off-target", None


def run_episode(cfg: EpisodeConfig) -> EpisodeResult:
    """Perceive, map, verify and act until the agent stops or the budget runs out."""
    try:
        scene = load_scene(cfg.scene)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"scene: {exc}") from None
    except SceneError as exc:
        raise ConfigurationError(f"scene: {exc}") from None
    goal = load_goal(cfg)
    gt = GroundTruth(scene)
    target_id = cfg.target_id or resolve_target(scene, goal, gt)
    try:
        target = scene.instance(target_id)
    except (KeyError, SceneError):
        raise ConfigurationError(f"unknown target id {target_id!r}") from None
    radius, budget = cfg.radius, cfg.budget
    ell = gt.shortest_path(scene.spawn[:2], target, radius)

    state = scene.spawn_state()
    perception = Perception(scene, goal, cfg.noise, cfg.seed)
    agent = ContextNavAgent(goal, perception, radius, cfg.seed, cfg.ablate, start=state)
    trajectory = [(state.x, state.y, state.heading)]
    verdict, stop_id = "time-out", None
    while state.step_count < budget:
        step = state.step_count
        agent.perceive(state, step)
        agent.verify(step)
        action = agent.act(state, step)
        if action is Action.STOP:
            verdict, stop_id = stop_verdict(scene, target_id, goal.target_category, [state.x, state.y], radius)
            agent.log(step, "stop", verdict=verdict)
            break
        nxt = step_agent(scene, state, action)
        if action is Action.FORWARD and nxt.path_length == state.path_length:
            agent.bumped(state, step)
        elif action is Action.FORWARD:
            agent.moved()
        state = nxt
        trajectory.append((state.x, state.y, state.heading))
    if verdict == "time-out":
        agent.log(state.step_count, "time-out")
    return EpisodeResult(
        episode_id=cfg.episode_id,
        success=int(verdict == "target"),
        steps=state.step_count,
        path_length=state.path_length,
        shortest_path=ell,
        verdict=verdict,
        stop_instance=stop_id,
        target_id=target_id,
        trajectory=trajectory,
        trace=agent.trace,
        profile=cfg.profile,
        success_radius=radius,
        max_steps=budget,
        grids=agent.grids,
    )


# ---------------------------------------------------------------------------
# batches


def load_manifest(path: str | Path) -> list[EpisodeConfig]:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"manifest: {exc}") from None
    if not isinstance(doc, list) or not doc:
        raise ConfigurationError("manifest must be a non-empty JSON list")
    return [EpisodeConfig.from_dict(d, p.parent) for d in doc]


def run_batch(configs: Sequence[EpisodeConfig], out_dir: str | Path | None = None,
              overrides: dict[str, Any] | None = None) -> list[EpisodeResult]:
    """Run episodes in order; results are written as ``<episode_id>.result.json`` when ``out_dir`` is set."""
    results = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for k, cfg in enumerate(configs):
        if overrides:
            cfg = replace(cfg, **overrides)
        if not cfg.episode_id:
            cfg = replace(cfg, episode_id=f"ep{k:03d}")
        res = run_episode(cfg)
        results.append(res)
        if out is not None:
            res.save(out / f"{cfg.episode_id}.result.json")
    return results


def collect_results(in_dir: str | Path) -> list[EpisodeResult]:
    files = sorted(Path(in_dir).glob("*.result.json"))
    return [load_result(f) for f in files]


def metrics_json(results: Sequence[EpisodeResult]) -> str:
    return json.dumps(summarize(results), sort_keys=True, indent=1) + "\n"

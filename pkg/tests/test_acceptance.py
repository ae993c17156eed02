"""The eleven acceptance criteria, each reported as one PASS/FAIL line."""
import copy
import json
import math
import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from contextnav.generator import GenConfig, build_suite, generate_scene
from contextnav.goal import RELATIONS
from contextnav.groundtruth import GroundTruth
from contextnav.harness import EpisodeResult, compute_metrics, load_manifest, metrics_json, run_batch
from contextnav.mapping import (
    InstanceStore, extract_wall_planes, geodesic_distance, record_from_instance, room_count, segment_rooms,
    voxel_overlap,
)
from contextnav.verification import (
    TargetRoomUnknown, align_frame, eval_predicate, room_filter, sample_viewpoints, to_local, viewpoint_ring,
)
from test_mapping import plane_points, shifted_cloud

SUITE_SIZE = 50


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def random_configs(n, seed):
    r = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        v, c_r, c_t = r.uniform(-5, 5, (3, 2))
        if np.linalg.norm(c_r - v) < 1e-6:
            continue
        out.append((v, c_r, c_t, *r.uniform(0, 2.5, 2)))
    return out


# --- suite shared by criteria 9, 10 and 11 -----------------------------------


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("suite")
    manifest = build_suite(root / "episodes", SUITE_SIZE, seed0=0)
    configs = load_manifest(manifest)
    t0 = time.perf_counter()
    results = run_batch(configs, root / "results")
    elapsed = time.perf_counter() - t0
    roles = {}
    for cfg in configs:
        info = json.loads((root / "episodes" / f"{cfg.episode_id}_info.json").read_text())
        roles[cfg.episode_id] = info["roles"]
    return {"configs": configs, "results": results, "elapsed": elapsed, "roles": roles, "root": root}


def stops_on(results, roles, role):
    return [r.episode_id for r in results if r.verdict == "distractor" and roles[r.episode_id].get(r.stop_instance) == role]


# --- criteria ----------------------------------------------------------------


def test_criterion_01_predicate_oracle():
    cases = random_configs(1000, 2024)
    t0 = time.perf_counter()
    got = [eval_predicate(rho, align_frame(v, c_r), c_r, c_t, z_r, z_t)
           for v, c_r, c_t, z_r, z_t in cases for rho in RELATIONS]
    elapsed = time.perf_counter() - t0
    want = [oracles.predicate(rho, v, c_r, c_t, z_r, z_t) for v, c_r, c_t, z_r, z_t in cases for rho in RELATIONS]
    agree = sum(a == b for a, b in zip(got, want))
    report(1, agree == 7000 and elapsed < 1.0, f"{agree}/7000 agree with the oracle, {elapsed:.3f} s")


def test_criterion_02_frame_properties():
    r = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        v, c_r = r.uniform(-5, 5, (2, 2))
        p = to_local(align_frame(v, c_r), c_r)
        worst = max(worst, abs(p.y), abs(p.bearing))
    total = agree = 0
    for v, c_r, c_t, z_r, z_t in random_configs(100, 8):
        base = {rho: eval_predicate(rho, align_frame(v, c_r), c_r, c_t, z_r, z_t) for rho in RELATIONS}
        for a in r.uniform(0, 2 * math.pi, 36):
            R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
            f = align_frame(R @ v, R @ c_r)
            for rho in RELATIONS:
                total += 1
                agree += eval_predicate(rho, f, R @ c_r, R @ c_t, z_r, z_t) == base[rho]
    report(2, worst < 1e-9 and agree == total,
           f"max |y|,|b| of reference = {worst:.1e}; rotation agreement {agree}/{total}")


def test_criterion_03_overlap_suite():
    r = np.random.default_rng(3)
    a = r.uniform(0, 0.5, (200, 3))
    vox = lambda idx: (np.array(idx, float) + 0.5) * 0.05
    hand = voxel_overlap(vox([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]), vox([[2, 0, 0], [3, 0, 0], [4, 0, 0]]))
    sym = 0
    for _ in range(200):
        p = r.uniform(0, 0.4, (r.integers(1, 400), 3))
        q = r.uniform(0.1, 0.5, (r.integers(1, 400), 3))
        sym += voxel_overlap(p, q) == voxel_overlap(q, p)
    ok = voxel_overlap(a, a) == 1.0 and voxel_overlap(a, a + 5.0) == 0.0 and hand == 2 / 3 and sym == 200
    report(3, ok, f"s(A,A)=1, disjoint=0, hand case={hand!r}, symmetric on {sym}/200 pairs")


def test_criterion_04_association():
    store = InstanceStore()
    cube = oracles_cube()
    rid = store.associate(cube, "chair")
    near = store.associate(cube + [0.2, 0.0, 0.0], "chair") == rid and store.last_pass == 1
    a, b = shifted_cloud(6)
    store = InstanceStore()
    rid = store.associate(a, "cabinet")
    high = store.associate(b, "cabinet") == rid and store.last_pass == 2
    a, b = shifted_cloud(3)
    store = InstanceStore()
    rid = store.associate(a, "cabinet")
    low = store.associate(b, "cabinet") != rid and len(store) == 2
    same = 0
    for seed in range(50):
        r = np.random.default_rng(seed)
        centers = r.uniform(-3, 3, (3, 2))
        while min(np.linalg.norm(centers[i] - centers[j]) for i in range(3) for j in range(i)) < 1.0:
            centers = r.uniform(-3, 3, (3, 2))
        obs = []
        for c in centers:
            pts = np.column_stack([r.uniform(-0.2, 0.2, (200, 2)) + c, r.uniform(0, 0.8, 200)])
            obs += [pts[r.choice(200, 120, replace=False)] for _ in range(3)]

        def partition(order):
            st = InstanceStore(seed)
            groups = {}
            for k in order:
                groups.setdefault(st.associate(obs[k], "chair"), set()).add(k)
            return {frozenset(g) for g in groups.values()}

        same += partition(range(9)) == partition(r.permutation(9))
    report(4, near and high and low and same == 50,
           f"0.20 m merge={near}, 0.50 m/0.60 merge={high}, 0.50 m/0.30 new={low}, permutation-stable {same}/50")


def oracles_cube(n=4):
    ii = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), -1).reshape(-1, 3)
    return (ii + 0.5) * 0.05


def test_criterion_05_ransac():
    recovered = total = 0
    t0 = time.perf_counter()
    for seed in range(100):
        r = np.random.default_rng(seed)
        k = int(r.integers(1, 4))
        angles = r.uniform(0, math.pi, k)
        while k > 1 and min(abs(math.remainder(a - b, math.pi)) for i, a in enumerate(angles) for b in angles[:i]) < 0.3:
            angles = r.uniform(0, math.pi, k)
        truth = [(np.array([math.cos(a), math.sin(a), 0.0]), r.uniform(-2, 2)) for a in angles]
        pts = np.vstack([plane_points(n, d, 700, r) for n, d in truth])
        planes = extract_wall_planes(pts, rng=r)
        for n, d in truth:
            total += 1
            for p in planes:
                s = 1.0 if p.normal @ n >= 0 else -1.0
                err = math.degrees(math.acos(min(1.0, abs(p.normal @ n))))
                if err <= 2.0 and abs(s * p.offset - d) <= 0.02:
                    recovered += 1
                    break
    elapsed = time.perf_counter() - t0
    rejected = 0
    for seed in range(100):
        r = np.random.default_rng(1000 + seed)
        tilt = r.uniform(0, 0.9)
        n = np.array([math.sin(tilt) * math.cos(seed), math.sin(tilt) * math.sin(seed), math.cos(tilt)])
        n = n if n[2] > 0.3 else np.array([0.0, 0.0, 1.0])
        planes = extract_wall_planes(plane_points(n, r.uniform(-1.5, 0.0), 1200, r), rng=r)
        rejected += all(abs(p.normal[2]) <= 0.3 for p in planes)
    rate = recovered / total
    report(5, rate >= 0.95 and rejected == 100 and elapsed < 5.0,
           f"recovered {recovered}/{total} vertical planes ({100 * rate:.1f}%), "
           f"horizontal rejected {rejected}/100, {elapsed:.2f} s")


def test_criterion_06_room_logic():
    two = furniture_stable = cross_dropped = cross_total = same_kept = same_total = unknown = 0
    r = np.random.default_rng(6)
    for seed in range(SUITE_SIZE):
        ep = generate_scene(seed, GenConfig(rooms=2, distractors=int(1 + seed % 2)))
        g = segment_rooms(GroundTruth(ep.scene).grids)
        n_rooms = room_count(g)
        two += n_rooms == 2
        cluttered = copy.deepcopy(g)
        free_cells = np.argwhere(cluttered.free)
        for c in free_cells[r.choice(len(free_cells), 6, replace=False)]:
            cluttered.hit[c[0] - 8:c[0] + 8, c[1] - 8:c[1] + 8] = True
        bare = copy.deepcopy(g)
        bare.hit &= bare.wall
        furniture_stable += room_count(segment_rooms(cluttered)) == n_rooms == room_count(segment_rooms(bare))
        insts = ep.scene.instances
        recs = {i.id: record_from_instance(i, k + 1) for k, i in enumerate(insts)}
        for a in insts:
            for b in insts:
                if a.id == b.id:
                    continue
                try:
                    res = room_filter(recs[a.id], [recs[b.id]], g, ep.goal)
                except TargetRoomUnknown:
                    unknown += 1
                    continue
                if a.room_hint != b.room_hint:
                    cross_total += 1
                    cross_dropped += res is None
                elif geodesic_distance(g, recs[a.id].center, recs[b.id].center) <= 3.0:
                    same_total += 1
                    same_kept += res is not None
    ok = two == SUITE_SIZE and furniture_stable == SUITE_SIZE and cross_dropped == cross_total \
        and same_kept == same_total and unknown == 0
    report(6, ok, f"2 rooms in {two}/{SUITE_SIZE}, furniture-stable {furniture_stable}/{SUITE_SIZE}, "
                  f"cross-room dropped {cross_dropped}/{cross_total}, same-room kept {same_kept}/{same_total}")


def test_criterion_07_viewpoints():
    anchor = (1.37, -2.11)
    vs = sample_viewpoints([anchor])
    ring = viewpoint_ring(anchor)
    err = 0.0
    for m, rad in enumerate((0.8, 1.2, 1.6, 2.0)):
        for k in (0, 6):
            th = 2 * math.pi * k / 24
            want = np.array([anchor[0] + rad * math.cos(th), anchor[1] + rad * math.sin(th)])
            err = max(err, float(np.abs(ring[m * 24 + k] - want).max()))
    report(7, vs.raw_count == 96 and len(ring) == 96 and err <= 1e-12,
           f"|V| = {vs.raw_count} per anchor, theta_0/theta_6 max error {err:.1e}")


def episode(success, ell, p, eid="e"):
    return EpisodeResult(eid, success, 1, p, ell, "target" if success else "time-out", None, "", [])


def test_criterion_08_metrics(suite):
    one = compute_metrics([episode(1, 4.0, 4.0)])["SPL"] / 100
    half = compute_metrics([episode(1, 5.0, 10.0)])["SPL"] / 100
    r = np.random.default_rng(8)
    batches = [[episode(int(r.random() < 0.6), float(r.uniform(1, 10)), float(r.uniform(0.5, 20)), str(k))
                for k in range(int(r.integers(1, 30)))] for _ in range(200)]
    batches.append(suite["results"])
    bounded = sum(compute_metrics(b)["SPL"] <= compute_metrics(b)["SR"] for b in batches)
    ok = abs(one - 1.0) <= 1e-9 and abs(half - 0.5) <= 1e-9 and bounded == len(batches)
    report(8, ok, f"SPL(p=l)={one}, SPL(l=5,p=10)={half}, SPL<=SR on {bounded}/{len(batches)} batches")


def test_criterion_09_end_to_end(suite):
    results = suite["results"]
    verdicts = [r.verdict for r in results]
    targets = verdicts.count("target")
    distractor = verdicts.count("distractor")
    residual = [r for r in results if r.verdict != "target"]
    explained = all(r.verdict == "time-out" and r.trace for r in residual)
    ok = distractor == 0 and targets >= 0.9 * len(results) and explained and suite["elapsed"] < 120
    report(9, ok, f"target {targets}/{len(results)}, distractor {distractor}, "
                  f"other {[(r.episode_id, r.verdict) for r in residual]}, {suite['elapsed']:.1f} s")


def test_criterion_10_ablations(suite, tmp_path):
    full = float(np.mean([r.path_length for r in suite["results"]]))
    nearest = run_batch(suite["configs"], overrides={"ablate": "value-map"})
    ablated = float(np.mean([r.path_length for r in nearest]))

    ctx = load_manifest(build_suite(tmp_path / "ctx", 8, seed0=0))
    ctx_roles = {c.episode_id: json.loads((tmp_path / "ctx" / f"{c.episode_id}_info.json").read_text())["roles"]
                 for c in ctx}
    ext = stops_on(run_batch(ctx, overrides={"ablate": "extrinsic"}), ctx_roles, "distractor")

    att = load_manifest(build_suite(tmp_path / "att", 8, seed0=0, distractor_kind="attribute"))
    att_roles = {c.episode_id: json.loads((tmp_path / "att" / f"{c.episode_id}_info.json").read_text())["roles"]
                 for c in att}
    intr = stops_on(run_batch(att, overrides={"ablate": "intrinsic"}), att_roles, "attribute-distractor")

    ok = ablated > full and len(ext) >= 1 and len(intr) >= 1
    report(10, ok, f"mean path value-map ablated {ablated:.3f} vs full {full:.3f}; "
                   f"extrinsic-ablated distractor stops {len(ext)}; intrinsic-ablated wrong-attribute stops {len(intr)}")


def test_criterion_11_determinism(suite):
    first = metrics_json(suite["results"])
    again = metrics_json(run_batch(suite["configs"]))
    on_disk = (suite["root"] / "results").glob("*.result.json")
    report(11, first == again and any(on_disk), f"metric JSON byte-identical on re-run: {first == again}")

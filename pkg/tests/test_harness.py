import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contextnav.generator import GenConfig, generate_scene
from contextnav.harness import (
    COCO_THRESHOLD, OPEN_VOCAB_THRESHOLD, PROFILES, VQA_THRESHOLD, ConfigurationError, EpisodeConfig,
    EpisodeResult, NoiseConfig, accept_detection, compute_metrics, load_manifest, metrics_json, run_batch,
    run_episode, summarize,
)
from contextnav.scene import FORWARD_STEP, Detection, save_scene, load_scene
from conftest import box_room, inst, scene_doc
import oracles


def test_gate_constants():
    assert (OPEN_VOCAB_THRESHOLD, COCO_THRESHOLD, VQA_THRESHOLD) == (0.45, 0.8, 0.6)
    assert PROFILES == {"coin": (0.25, 500), "instancenav": (1.0, 1000)}


def det(conf, coco):
    return Detection("x", "chair" if coco else "dresser", conf, np.ones((2, 2), bool), coco, np.zeros((4, 3)))


@pytest.mark.parametrize("conf,coco,prob,verify,ok", [
    (0.40, True, 1.0, True, False),
    (0.85, True, 0.0, True, True),
    (0.70, True, 1.0, True, False),
    (0.50, False, 0.6, True, True),
    (0.50, False, 0.5, True, False),
    (0.50, False, 0.0, False, True),
    (0.44, False, 1.0, False, False),
])
def test_category_gates(conf, coco, prob, verify, ok):
    assert accept_detection(det(conf, coco), lambda d: prob, verify) is ok


def result(success, ell, p, verdict=None):
    return EpisodeResult("e", int(success), 10, p, ell, verdict or ("target" if success else "time-out"), None, "t", [])


def test_metric_examples():
    assert compute_metrics([result(1, 5.0, 5.0)])["SPL"] == pytest.approx(100.0, abs=1e-9)
    assert compute_metrics([result(0, 5.0, 5.0)]) == {"SR": 0.0, "SPL": 0.0}
    assert compute_metrics([result(1, 5.0, 10.0)])["SPL"] / 100 == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(ValueError):
        compute_metrics([])
    with pytest.raises(ValueError):
        compute_metrics([result(1, 0.0, 1.0)])


batches = st.lists(st.tuples(st.booleans(), st.floats(0.1, 30), st.floats(0, 60)), min_size=1, max_size=30)


@settings(max_examples=100, deadline=None)
@given(batches, st.randoms())
def test_metric_properties(rows, rnd):
    res = [result(s, l, p) for s, l, p in rows]
    m = compute_metrics(res)
    assert m["SPL"] <= m["SR"] + 1e-9
    assert m["SPL"] / 100 == pytest.approx(oracles.spl(rows))
    rnd.shuffle(res)
    m2 = compute_metrics(res)
    assert m2["SR"] == pytest.approx(m["SR"]) and m2["SPL"] == pytest.approx(m["SPL"])


def test_result_json_round_trip(tmp_path):
    r = result(0, math.inf, 3.0)
    r.trajectory = [(0.0, 0.0, 0.0)]
    d = r.to_json()
    assert d["shortest_path"] is None
    r.save(tmp_path / "r.json")
    back = EpisodeResult.from_json(json.loads((tmp_path / "r.json").read_text()))
    assert math.isinf(back.shortest_path) and back.trajectory == [(0.0, 0.0, 0.0)]


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        EpisodeConfig(scene="s.json", caption="a bed", max_steps=0)
    with pytest.raises(ConfigurationError):
        EpisodeConfig(scene="s.json", caption="a bed", success_radius=-1)
    with pytest.raises(ConfigurationError):
        EpisodeConfig(scene="s.json", caption="a bed", profile="habitat")
    with pytest.raises(ConfigurationError):
        EpisodeConfig(scene="s.json")
    with pytest.raises(ConfigurationError):
        EpisodeConfig(scene="s.json", caption="a bed", ablate="everything")
    cfg = EpisodeConfig.from_dict({"scene": "a.json", "goal": "g.json", "profile": "instancenav"}, tmp_path)
    assert cfg.scene == str(tmp_path / "a.json") and (cfg.radius, cfg.budget) == (1.0, 1000)
    with pytest.raises(ConfigurationError):
        EpisodeConfig.from_dict({"scene": "a.json", "caption": "a bed", "bogus": 1})
    with pytest.raises(ConfigurationError):
        NoiseConfig.from_dict({"detector": {"nope": 1}})
    assert NoiseConfig.from_dict(NoiseConfig().to_dict()) == NoiseConfig()


def test_unloadable_inputs(tmp_path):
    with pytest.raises(ConfigurationError):
        run_episode(EpisodeConfig(scene=str(tmp_path / "missing.json"), caption="a bed"))
    p = tmp_path / "s.json"
    p.write_text(json.dumps(scene_doc([inst("b", "bed", 3, 3)])))
    with pytest.raises(ConfigurationError):
        run_episode(EpisodeConfig(scene=str(p), caption="a bed flying high"))
    with pytest.raises(ConfigurationError):
        run_episode(EpisodeConfig(scene=str(p), caption="a sofa"))


def check_result(res):
    assert 0 <= res.steps <= res.max_steps
    assert res.path_length >= 0
    moves = sum(1 for a, b in zip(res.trajectory, res.trajectory[1:]) if a[:2] != b[:2])
    assert res.path_length <= FORWARD_STEP * moves + 1e-9
    assert (res.verdict == "time-out") == (res.steps == res.max_steps and not any(
        e["event"] == "stop" for e in res.trace))
    assert sum(e["event"] == "room-override" for e in res.trace) <= 1
    if res.success:
        assert res.verdict == "target"


def test_one_room_episode(tmp_path):
    ep = generate_scene(3, GenConfig(rooms=1, distractors=0))
    sp, gp = ep.write(tmp_path, "one")
    res = run_episode(EpisodeConfig(scene=str(sp), goal=str(gp), seed=3))
    assert res.verdict == "target" and res.success == 1
    assert res.target_id == ep.info["target_id"]
    check_result(res)


def test_distractor_episode(tmp_path):
    ep = generate_scene(7, GenConfig(rooms=2, distractors=1))
    sp, gp = ep.write(tmp_path, "two")
    res = run_episode(EpisodeConfig(scene=str(sp), goal=str(gp), seed=7))
    assert res.verdict == "target" and res.stop_instance == ep.info["target_id"]
    assert list(ep.info["roles"].values()).count("distractor") == 1
    check_result(res)


def test_walled_off_goal_times_out(tmp_path):
    walls = box_room(0, 0, 6, 4) + box_room(4.0, 1.0, 5.5, 3.0)
    doc = scene_doc([inst("bed1", "bed", 4.75, 2.0, 0.3, top=0.6)], walls=walls, bounds=(0, 0, 6, 4))
    p = tmp_path / "walled.json"
    p.write_text(json.dumps(doc))
    res = run_episode(EpisodeConfig(scene=str(p), caption="a bed", max_steps=60))
    assert res.verdict == "time-out" and res.success == 0 and res.steps == 60
    assert math.isinf(res.shortest_path)
    check_result(res)


def test_batch_reproducible(tmp_path):
    from contextnav.generator import build_suite
    m = build_suite(tmp_path / "suite", n=2)
    cfgs = load_manifest(m)
    a = metrics_json(run_batch(cfgs, tmp_path / "a"))
    b = metrics_json(run_batch(cfgs, tmp_path / "b"))
    assert a == b
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == ["ep000.result.json", "ep001.result.json"]
    assert json.loads(a)["episodes"] == 2

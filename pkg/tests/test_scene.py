import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contextnav import scene as sc
from contextnav.generator import GenConfig, generate_scene
from contextnav.goal import AttributeQuestion
from contextnav.scene import (
    AGENT_RADIUS, Action, AgentState, AttributeVqaNoise, CategoryVqaNoise, DetectorNoise, SceneError,
    SensorConfig, load_scene, oracle_detect, oracle_vqa_attribute, oracle_vqa_category, render_depth,
    scene_to_dict, step_agent,
)
from conftest import box_room, inst, scene_doc
from oracles import ray_segment


def test_minimal_scene():
    s = load_scene(scene_doc([inst("bed1", "bed", 3.0, 3.0)]))
    assert len(s.walls) == 4 and len(s.instances) == 1
    assert s.instance("bed1").category == "bed"


def test_duplicate_id_rejected():
    doc = scene_doc([inst("a", "bed", 1, 1), inst("a", "sofa", 3, 3)])
    with pytest.raises(SceneError, match="duplicate"):
        load_scene(doc)


def test_schema_errors_name_the_field():
    doc = scene_doc()
    del doc["walls"][1]["height"]
    with pytest.raises(SceneError, match=r"walls\[1\]\.height"):
        load_scene(doc)
    with pytest.raises(SceneError, match="outside scene bounds"):
        load_scene(scene_doc([inst("x", "bed", 5.0, 1.0)]))


def test_unknown_instance_lookup():
    s = load_scene(scene_doc())
    with pytest.raises(KeyError):
        s.instance("nope")


def test_generated_scene_round_trip(tmp_path):
    ep = generate_scene(7, GenConfig(rooms=2, distractors=1))
    path = tmp_path / "s.json"
    sc.save_scene(ep.scene, path)
    assert load_scene(path) == ep.scene
    assert scene_to_dict(load_scene(path)) == scene_to_dict(ep.scene)


def test_depth_flat_wall_two_meters():
    s = load_scene(scene_doc(spawn=(2.0, 2.0, 0.0)))
    d = render_depth(s, AgentState(2.0, 2.0, 0.0))
    mid = d.width // 2
    for c in (mid - 1, mid):
        assert abs(d.ranges[c] - 2.0) <= 0.025


def test_depth_open_space_is_no_hit():
    s = load_scene(scene_doc(bounds=(0.0, 0.0, 20.0, 4.0), spawn=(1.0, 2.0, 0.0)))
    d = render_depth(s, AgentState(1.0, 2.0, 0.0))
    mid = d.width // 2
    assert np.all(np.isinf(d.ranges[mid - 5:mid + 5]))


def test_rotation_covers_every_wall_in_range():
    walls = box_room(0, 0, 4, 4) + [{"x1": 2.0, "y1": 0.0, "x2": 2.0, "y2": 1.5, "height": 2.6}]
    s = load_scene(scene_doc(walls=walls, spawn=(1.0, 2.5, 0.0)))
    state = AgentState(1.0, 2.5, 0.0)
    seen = set()
    for _ in range(12):
        d = render_depth(s, state)
        seen |= set(d.surf_owner[d.surf_kind == sc.WALL].tolist())
        state = step_agent(s, state, Action.TURN_LEFT)
    assert seen == set(range(len(walls)))


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.4, 3.6), y=st.floats(0.4, 3.6), k=st.integers(0, 11))
def test_depth_matches_analytic_intersection(x, y, k):
    s = load_scene(scene_doc(spawn=(x, y, 0.0)))
    state = AgentState(x, y, k * math.pi / 6)
    d = render_depth(s, state)
    for c, theta in enumerate(d.column_headings()):
        want = min(ray_segment((x, y), theta, (w.x1, w.y1), (w.x2, w.y2)) for w in s.walls)
        want = want if want <= d.sensor.max_range else math.inf
        if math.isinf(want):
            assert math.isinf(d.ranges[c]) or d.ranges[c] >= d.sensor.max_range - 0.05
        else:
            assert abs(d.ranges[c] - want) <= 0.05


def test_forward_in_open_space():
    s = load_scene(scene_doc(bounds=(-2.0, -2.0, 2.0, 2.0), spawn=(0.0, 0.0, 0.0)))
    st1 = step_agent(s, AgentState(0.0, 0.0, 0.0), Action.FORWARD)
    assert (st1.x, st1.y, st1.heading) == pytest.approx((0.25, 0.0, 0.0))
    assert st1.path_length == pytest.approx(0.25) and st1.step_count == 1


def test_twelve_left_turns_return_heading():
    s = load_scene(scene_doc())
    st0 = AgentState(1.0, 1.0, math.radians(60))
    st1 = st0
    for _ in range(12):
        st1 = step_agent(s, st1, Action.TURN_LEFT)
    assert st1.heading == pytest.approx(st0.heading) and st1.step_count == 12


def test_forward_into_wall_is_blocked():
    s = load_scene(scene_doc(spawn=(3.9 - 0.0, 2.0, 0.0)))
    st0 = AgentState(4.0 - 0.1 - AGENT_RADIUS + 0.05, 2.0, 0.0)
    st1 = step_agent(s, st0, Action.FORWARD)
    assert (st1.x, st1.y) == (st0.x, st0.y)
    assert st1.step_count == 1 and st1.path_length == 0.0


def test_stop_freezes():
    s = load_scene(scene_doc())
    st0 = AgentState(1.0, 1.0, 0.0, 4, 1.0)
    assert step_agent(s, st0, Action.STOP) == st0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from([Action.FORWARD, Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT]),
                min_size=1, max_size=60))
def test_agent_never_crosses_walls(actions):
    walls = box_room(0, 0, 4, 4) + [{"x1": 2.0, "y1": 0.0, "x2": 2.0, "y2": 3.0, "height": 2.6}]
    s = load_scene(scene_doc(walls=walls))
    state = AgentState(1.0, 1.0, 0.0)
    for a in actions:
        nxt = step_agent(s, state, a)
        if (nxt.x, nxt.y) != (state.x, state.y):
            for w in s.walls:
                d = sc.segment_distances(np.array([state.x, state.y]), np.array([nxt.x, nxt.y]),
                                         np.array([w.x1]), np.array([w.y1]), np.array([w.x2]), np.array([w.y2]))
                assert d.min() >= AGENT_RADIUS - 1e-9
        state = nxt
    assert 0 < state.x < 4 and 0 < state.y < 4
    assert state.path_length <= 0.25 * sum(a is Action.FORWARD for a in actions) + 1e-9


def _dresser_scene(wall_between=False):
    walls = box_room(0, 0, 5, 4)
    if wall_between:
        walls.append({"x1": 2.5, "y1": 0.0, "x2": 2.5, "y2": 4.0, "height": 2.6})
    return load_scene(scene_doc([inst("d1", "dresser", 4.0, 2.0, 0.3, top=1.0, color="white")],
                                walls=walls, bounds=(0, 0, 5, 4), spawn=(1.0, 2.0, 0.0)))


def test_detect_noise_free_dresser():
    s = _dresser_scene()
    dets = oracle_detect(s, render_depth(s, AgentState(1.0, 2.0, 0.0)))
    assert len(dets) == 1
    assert dets[0].proposed_category == "dresser" and dets[0].confidence == 1.0
    assert dets[0].points.shape[1] == 3 and len(dets[0].points) == dets[0].pixel_count


def test_detect_label_flip():
    s = _dresser_scene()
    noise = DetectorNoise(flip_prob=1.0, confusion={"dresser": "cabinet"})
    dets = oracle_detect(s, render_depth(s, AgentState(1.0, 2.0, 0.0)), noise)
    assert dets[0].proposed_category == "cabinet"


def test_detect_occluded_instance():
    s = _dresser_scene(wall_between=True)
    assert oracle_detect(s, render_depth(s, AgentState(1.0, 2.0, 0.0))) == []


def test_vqa_category():
    s = _dresser_scene()
    assert oracle_vqa_category(s, "d1", "dresser") == 1.0
    assert oracle_vqa_category(s, "d1", "bed") == 0.0
    amb = oracle_vqa_category(s, "d1", "dresser", mask_pixels=3, noise=CategoryVqaNoise(ambiguity_pixels=50))
    assert amb == 0.5 and amb < 0.6
    with pytest.raises(KeyError):
        oracle_vqa_category(s, "zz", "bed")


def test_vqa_attribute_bands():
    s = load_scene(scene_doc([inst("p", "picture", 2, 3.8, 0.15, base=1.4, top=2.0, color="yellow and green")]))
    q = AttributeQuestion("color", "Is the picture yellow and green in color?", "yellow and green")
    assert oracle_vqa_attribute(s, "p", q) == 13
    red = AttributeQuestion("color", "Is the picture red in color?", "red")
    assert oracle_vqa_attribute(s, "p", red) == 2
    shape = AttributeQuestion("shape", "Is the picture round in shape?", "round")
    assert oracle_vqa_attribute(s, "p", shape) == 7
    assert oracle_vqa_attribute(s, "p", q, AttributeVqaNoise(unknown_prob=1.0)) == 7
    assert oracle_vqa_attribute(s, "p", q) == 13


def test_noise_free_oracles_exact_on_ground_truth():
    s = load_scene(scene_doc([inst("a", "bed", 1, 1, color="red"), inst("b", "sofa", 3, 3, color="blue")]))
    for i in s.instances:
        for cat in ("bed", "sofa", "chair"):
            assert oracle_vqa_category(s, i.id, cat) == float(cat == i.category)
        for col in ("red", "blue"):
            q = AttributeQuestion("color", f"Is the {i.category} {col}?", col)
            assert oracle_vqa_attribute(s, i.id, q) == (13 if i.attributes["color"] == col else 2)


def test_determinism_with_seeded_noise():
    s = _dresser_scene()
    d = render_depth(s, AgentState(1.0, 2.0, 0.0))
    noise = DetectorNoise(flip_prob=0.5, confusion={"dresser": "cabinet"}, confidence_low=0.3)
    a = [(x.proposed_category, x.confidence) for x in oracle_detect(s, d, noise, np.random.default_rng(5))]
    b = [(x.proposed_category, x.confidence) for x in oracle_detect(s, d, noise, np.random.default_rng(5))]
    assert a == b
    np.testing.assert_array_equal(d.ranges, render_depth(s, AgentState(1.0, 2.0, 0.0)).ranges)

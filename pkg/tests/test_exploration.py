import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from contextnav import exploration as ex
from contextnav.exploration import (
    ExplorationExhausted, ExplorationState, Frontier, LocalPlanner, ReplanNeeded, SimilarityField,
    apply_room_override, extract_frontiers, oracle_similarity, plan_local, rank_frontiers, update_value_map,
)
from contextnav.goal import parse_caption
from contextnav.mapping import GridStack, InstanceStore, grid_from_scene, segment_rooms
from contextnav.scene import Action, AgentState, SensorConfig, load_scene, render_depth, step_agent
from conftest import box_room, inst, scene_doc


def sim_scene():
    doc = scene_doc([inst("t", "dresser", 3.5, 1.0, 0.3, top=1.0),
                     inst("c", "lamp", 3.5, 7.0, 0.2, top=1.5)],
                    bounds=(0, 0, 4, 8), spawn=(0.5, 1.0, 0.0))
    return load_scene(doc)


def test_similarity_oracle_values():
    s = sim_scene()
    goal = parse_caption("a dresser near the lamp")
    d = render_depth(s, AgentState(0.5, 1.0, 0.0))
    sim = oracle_similarity(s, d, goal)
    mid = d.width // 2
    assert sim.values[mid] == pytest.approx(0.6)
    d2 = render_depth(s, AgentState(0.5, 4.0, math.pi))
    assert oracle_similarity(s, d2, goal).values[mid] == pytest.approx(0.1)
    d3 = render_depth(s, AgentState(3.5, 5.0, math.pi / 2))
    assert oracle_similarity(s, d3, goal).values[mid] == pytest.approx(0.4)


ONE = SensorConfig(hfov_deg=0.1, width=1, height=8)


def test_value_map_single_and_fused():
    s = sim_scene()
    g = GridStack.empty(0, 0, 4, 8)
    state = AgentState(0.5, 1.0, 0.0)
    d = render_depth(s, state, ONE)
    update_value_map(g, SimilarityField([0.2]), d, state)
    touched = g.confidence > 0
    assert touched.any() and np.allclose(g.value[touched], 0.2)
    assert (g.value[~touched] == 0).all()
    update_value_map(g, SimilarityField([0.8]), d, state)
    assert np.allclose(g.value[touched], 0.5)


def test_value_map_uniform_half(one_room):
    g = GridStack.empty(0, 0, 4, 4)
    d = render_depth(one_room, one_room.spawn_state())
    update_value_map(g, SimilarityField(np.full(d.width, 0.5)), d)
    touched = g.confidence > 0
    assert np.allclose(g.value[touched], 0.5)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.floats(0.5, 3.5), st.floats(0.5, 3.5), st.integers(0, 11), st.floats(0, 1)),
                min_size=1, max_size=5))
def test_value_layer_stays_in_unit_interval(obs):
    s = load_scene(scene_doc())
    g = GridStack.empty(-6, -6, 10, 10)
    for x, y, k, v in obs:
        d = render_depth(s, AgentState(x, y, k * math.pi / 6))
        vals = np.clip(v + np.linspace(-0.5, 0.5, d.width), 0, 1)
        update_value_map(g, SimilarityField(vals), d)
        assert g.value.min() >= 0 and g.value.max() <= 1 + 1e-12
        assert g.confidence.min() >= 0 and g.confidence.max() <= 1 + 1e-12


def disc_grid(radius=1.0):
    g = GridStack.empty(-3, -3, 3, 3)
    c = g.to_world(np.argwhere(np.ones(g.shape, bool))).reshape(g.shape + (2,))
    g.seen[:] = np.hypot(c[..., 0], c[..., 1]) <= radius
    return g


def test_frontier_ring():
    fs = extract_frontiers(disc_grid())
    assert len(fs) == 1
    g = disc_grid()
    pts = g.to_world(fs[0].cells)
    assert np.hypot(pts[:, 0], pts[:, 1]).min() > 0.85


def test_no_frontiers_when_explored():
    g = GridStack.empty(0, 0, 2, 2)
    g.seen[:] = True
    assert extract_frontiers(g) == []


def test_two_openings_two_clusters():
    g = GridStack.empty(0, 0, 4, 4)
    g.seen[:] = True
    g.hit[0, :] = g.hit[-1, :] = g.hit[:, 0] = g.hit[:, -1] = True
    g.hit[0, 20:40] = False
    g.seen[0, 20:40] = False
    g.hit[-1, 30:50] = False
    g.seen[-1, 30:50] = False
    fs = extract_frontiers(g)
    assert len(fs) == 2
    for f in fs:
        assert g.free[f.cells[:, 0], f.cells[:, 1]].all()


def _fr(cell, value, room=1, dist=math.inf):
    return Frontier(cell, np.array([cell]), value, room, dist)


def test_rank_by_value_then_distance():
    g = GridStack.empty(0, 0, 1, 1)
    a, b = _fr((1, 1), 0.3), _fr((2, 2), 0.8)
    assert rank_frontiers([a, b], g)[0] is b
    near, far = _fr((5, 5), 0.5, dist=2.0), _fr((1, 1), 0.5, dist=5.0)
    assert rank_frontiers([far, near], g)[0] is near
    assert rank_frontiers([a], g) == [a]
    with pytest.raises(ExplorationExhausted):
        rank_frontiers([], g)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30), st.sampled_from([0.1, 0.4, 0.6]),
                          st.sampled_from([1.0, 2.0, 3.5])), min_size=1, max_size=8, unique_by=lambda t: t[:2]),
       st.randoms())
def test_rank_is_total_and_deterministic(rows, rnd):
    g = GridStack.empty(0, 0, 1, 1)
    fs = [_fr((i, j), v, dist=d) for i, j, v, d in rows]
    order = [f.cell for f in rank_frontiers(fs, g)]
    shuffled = list(fs)
    rnd.shuffle(shuffled)
    assert [f.cell for f in rank_frontiers(shuffled, g)] == order
    vals = [next(f.value for f in fs if f.cell == c) for c in order]
    assert vals == sorted(vals, reverse=True)


def override_fixture():
    """Two rooms joined by a lintel doorway; left room half explored, right room explored up to x=5."""
    g = GridStack.empty(0, 0, 6, 3)
    c = g.to_world(np.argwhere(np.ones(g.shape, bool))).reshape(g.shape + (2,))
    x, y = c[..., 0], c[..., 1]
    inside = (x > 0.1) & (x < 5.9) & (y > 0.1) & (y < 2.9)
    g.seen[:] = inside & ((x < 2.0) | ((x > 3.0) & (x < 5.0)))
    i = g.to_cell([3.0, 0.0])[0]
    g.wall[i, :] = True
    g.seen[i, :] = False
    g.seen[i - 20:i + 1, 20:38] = True  # doorway under a lintel: walled in the wall layer, still free
    g.wall[i - 20:i, :] = False
    segment_rooms(g)
    g.value[:] = np.where(x < 3.0, 0.9, 0.1)
    g.confidence[:] = 1.0
    return g


def store_with(*items):
    store = InstanceStore()
    for cat, (cx, cy) in items:
        pts = np.column_stack([np.full(20, cx) + np.linspace(-0.05, 0.05, 20), np.full(20, cy), np.linspace(0, 1, 20)])
        store.associate(pts, cat)
    return store


def test_room_override_fires_once():
    g = override_fixture()
    goal = parse_caption("a dresser near the cabinet")
    fs = rank_frontiers(extract_frontiers(g), g, agent_xy=[1.0, 1.5])
    assert len({f.room for f in fs}) == 2
    best = fs[0]
    store = store_with(("dresser", (4.0, 1.5)))
    xs = ExplorationState()
    choice = apply_room_override(xs, g, store, goal, fs)
    target_room = g.room[g.to_cell([4.0, 1.5])[0], g.to_cell([4.0, 1.5])[1]]
    assert choice.room == target_room != best.room
    assert not xs.override_available
    assert apply_room_override(xs, g, store, goal, fs) is best


def test_room_override_needs_missing_context():
    g = override_fixture()
    goal = parse_caption("a dresser near the cabinet")
    fs = rank_frontiers(extract_frontiers(g), g, agent_xy=[1.0, 1.5])
    store = store_with(("dresser", (4.0, 1.5)), ("cabinet", (4.5, 2.0)))
    xs = ExplorationState()
    assert apply_room_override(xs, g, store, goal, fs) is fs[0]
    assert xs.override_available


def open_grid():
    g = GridStack.empty(0, 0, 4, 4)
    g.seen[:] = True
    return g


def test_plan_forward_and_turn():
    g = open_grid()
    st0 = AgentState(1.0, 2.0, 0.0)
    assert plan_local(g, st0, [2.0, 2.0]) is Action.FORWARD
    assert plan_local(g, st0, [0.0, 2.0]) is Action.TURN_LEFT
    assert plan_local(g, st0, [1.1, 2.0]) is Action.STOP


def test_plan_unreachable():
    g = open_grid()
    lo, hi = g.to_cell([2.4, 2.4]), g.to_cell([3.6, 3.6])
    g.hit[lo[0]:hi[0] + 1, lo[1]] = g.hit[lo[0]:hi[0] + 1, hi[1]] = True
    g.hit[lo[0], lo[1]:hi[1] + 1] = g.hit[hi[0], lo[1]:hi[1] + 1] = True
    with pytest.raises(ReplanNeeded):
        plan_local(g, AgentState(1.0, 1.0, 0.0), [3.0, 3.0])


@settings(max_examples=12, deadline=None)
@given(st.floats(0.6, 3.4), st.floats(0.6, 3.4), st.integers(0, 11))
def test_planner_progress_on_static_map(wx, wy, k):
    walls = box_room(0, 0, 4, 4) + [{"x1": 2.0, "y1": 0.0, "x2": 2.0, "y2": 2.5, "height": 2.6}]
    s = load_scene(scene_doc(walls=walls))
    # reachable means the stop disc around the waypoint fits outside the planner's clearance band
    from contextnav.groundtruth import clearance
    assume(clearance(s, np.array([[wx, wy]]))[0] >= 0.35)
    g = grid_from_scene(s)
    planner = LocalPlanner()
    state = AgentState(1.0, 1.0, k * math.pi / 6)
    try:
        planner.next_action(g, state, [wx, wy])
    except ReplanNeeded:
        return
    from contextnav.mapping import geodesic_distance
    passable = g.free
    last = geodesic_distance(g, [state.x, state.y], [wx, wy], passable, snap=0.6)
    for block in range(20):
        for _ in range(12):
            a = planner.next_action(g, state, [wx, wy])
            if a is Action.STOP:
                assert math.hypot(state.x - wx, state.y - wy) <= 0.2 + 1e-9
                return
            state = step_agent(s, state, a)
        d = geodesic_distance(g, [state.x, state.y], [wx, wy], passable, snap=0.6)
        assert d <= last + 1e-9
        last = d
    pytest.fail("waypoint not reached")

import json
import math

import numpy as np
import pytest

from hybridplan.scenario import (
    DT,
    LEAD_PROFILES,
    Adjacency,
    GoalSpec,
    ObstacleSpec,
    ScenarioFormatError,
    _t_junction_centerline,
    corpus_variants,
    generate_corpus,
    load_scenario,
    make_lane_follow,
    make_straight_road,
    make_t_junction,
    make_weave_fixture,
    save_scenario,
    scenario_from_dict,
    split_corpus,
)


@pytest.fixture(scope="module")
def junction():
    return make_t_junction("roundtrip", oncoming_speed=8.0, time_offset=1.0)


# ---------------------------------------------------------------------------
# serialization


def test_dict_round_trip(junction):
    data = junction.to_dict()
    rebuilt = scenario_from_dict(data)
    assert rebuilt.to_dict() == data


def test_file_round_trip(tmp_path, junction):
    path = tmp_path / "junction.json"
    save_scenario(junction, path)
    loaded = load_scenario(path)
    assert loaded.to_dict() == junction.to_dict()
    assert loaded.scenario_id == "roundtrip"


def test_waypoint_obstacles_survive_round_trip():
    sc = make_t_junction("hes", oncoming_speed=6.0, lead_profile="hesitate")
    rebuilt = scenario_from_dict(sc.to_dict())
    orig = sc.obstacles[0]
    back = rebuilt.obstacles[0]
    assert back.motion_type == "waypoints"
    np.testing.assert_array_equal(back.waypoints, orig.waypoints)


def test_invalid_json_file_reports_path(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ScenarioFormatError, match="invalid JSON"):
        load_scenario(bad)


def test_schema_rejections(junction):
    base = junction.to_dict()

    missing = dict(base)
    del missing["goal"]
    with pytest.raises(ScenarioFormatError, match="goal"):
        scenario_from_dict(missing)

    wrong_version = dict(base, format_version=99)
    with pytest.raises(ScenarioFormatError, match="format_version"):
        scenario_from_dict(wrong_version)

    bad_adj = json.loads(json.dumps(base))
    bad_adj["adjacency"]["left"] = "sideways"
    with pytest.raises(ScenarioFormatError, match="adjacency"):
        scenario_from_dict(bad_adj)

    bad_fp = json.loads(json.dumps(base))
    bad_fp["obstacles"][0]["footprint"]["length"] = 0
    with pytest.raises(ScenarioFormatError, match="footprint"):
        scenario_from_dict(bad_fp)

    short_path = json.loads(json.dumps(base))
    short_path["reference_path"] = [[0.0, 0.0]]
    with pytest.raises(ScenarioFormatError, match="reference_path"):
        scenario_from_dict(short_path)


def test_semantic_rejections(junction):
    base = junction.to_dict()

    bad_motion = json.loads(json.dumps(base))
    bad_motion["obstacles"][0]["motion"] = {"type": "teleport"}
    with pytest.raises(ScenarioFormatError, match="motion type"):
        scenario_from_dict(bad_motion)

    incomplete = json.loads(json.dumps(base))
    incomplete["obstacles"][0]["motion"] = {"type": "constant_velocity", "x": 0.0}
    with pytest.raises(ScenarioFormatError, match="missing field"):
        scenario_from_dict(incomplete)

    far_goal = json.loads(json.dumps(base))
    far_goal["goal"]["s_range"] = [1000.0, 1010.0]
    with pytest.raises(ScenarioFormatError, match="beyond path length"):
        scenario_from_dict(far_goal)

    late_goal = json.loads(json.dumps(base))
    late_goal["max_steps"] = late_goal["goal"]["time_window"][1] - 1
    with pytest.raises(ScenarioFormatError, match="max_steps"):
        scenario_from_dict(late_goal)


def test_goal_and_adjacency_validation():
    with pytest.raises(ScenarioFormatError, match="s-range"):
        GoalSpec(s_min=10.0, s_max=10.0, t_min=0, t_max=5, target_velocity=8.0)
    with pytest.raises(ScenarioFormatError, match="inverted"):
        GoalSpec(s_min=0.0, s_max=10.0, t_min=9, t_max=5, target_velocity=8.0)
    with pytest.raises(ScenarioFormatError, match="adjacency.right"):
        Adjacency(right="both")


# ---------------------------------------------------------------------------
# obstacle motion


def test_constant_velocity_state_at():
    obs = ObstacleSpec(
        length=4.5, width=1.8, motion_type="constant_velocity",
        init=(10.0, -2.0, 0.0, 6.0),
    )
    x, y, heading, v = obs.state_at(25)
    assert x == pytest.approx(10.0 + 6.0 * 2.5, rel=1e-12)
    assert (y, heading, v) == (-2.0, 0.0, 6.0)


def test_waypoint_state_at_and_extrapolation():
    wp = np.array([[0.0, 0.0, 0.0, 4.0], [0.4, 0.0, 0.0, 4.0], [0.8, 0.0, 0.0, 5.0]])
    obs = ObstacleSpec(length=4.5, width=1.8, motion_type="waypoints", waypoints=wp)
    assert obs.state_at(1) == (0.4, 0.0, 0.0, 4.0)
    # beyond the table: last row extrapolated at its own velocity
    x, _, _, v = obs.state_at(5)
    assert v == 5.0
    assert x == pytest.approx(0.8 + 5.0 * 3 * DT, rel=1e-12)


def test_track_matches_state_at():
    obs = ObstacleSpec(
        length=4.5, width=1.8, motion_type="constant_velocity",
        init=(0.0, 1.0, 0.3, 7.0),
    )
    track = obs.track(start_step=4, n_steps=10)
    assert track.poses.shape == (10, 3)
    for k in range(10):
        x, y, heading, _ = obs.state_at(4 + k)
        np.testing.assert_allclose(track.poses[k], [x, y, heading], rtol=1e-12)


def test_obstacle_spec_validation():
    with pytest.raises(ScenarioFormatError, match="init"):
        ObstacleSpec(length=4.5, width=1.8, motion_type="constant_velocity")
    with pytest.raises(ScenarioFormatError, match="rows"):
        ObstacleSpec(
            length=4.5, width=1.8, motion_type="waypoints",
            waypoints=np.zeros((3, 2)),
        )
    with pytest.raises(ScenarioFormatError, match="motion type"):
        ObstacleSpec(length=4.5, width=1.8, motion_type="spline")


# ---------------------------------------------------------------------------
# generators


def test_junction_geometry(junction):
    path = junction.reference_path
    # stem runs north from the bottom, exit lane runs west at +1.75
    assert path[0, 1] < -40.0
    assert path[-1, 1] == pytest.approx(1.75, abs=1e-6)
    assert path[-1, 0] < -60.0
    assert junction.ego_init.heading == pytest.approx(0.5 * math.pi)
    assert len(junction.obstacles) == 2
    assert junction.goal.s_max <= junction.path_length
    assert junction.boundary_segments().n_segments > 100


def test_time_offset_shifts_lead_start():
    a = make_t_junction("a", oncoming_speed=8.0, time_offset=0.0)
    b = make_t_junction("b", oncoming_speed=8.0, time_offset=1.0)
    # one second later at 8 m/s: the lead starts 8 m further back
    assert b.obstacles[0].init[0] == pytest.approx(a.obstacles[0].init[0] - 8.0)
    assert b.obstacles[1].init[0] == pytest.approx(a.obstacles[1].init[0] - 8.0)


def crossing_step(obs, x_conflict, n_steps=300):
    for k in range(n_steps):
        if obs.state_at(k)[0] >= x_conflict:
            return k
    raise AssertionError("obstacle never reaches the junction")


def test_lead_profiles_change_arrival():
    _, _, x_conflict = _t_junction_centerline()
    kw = dict(oncoming_speed=7.0, time_offset=1.0)
    base = crossing_step(
        make_t_junction("c", lead_profile="constant", **kw).obstacles[0], x_conflict
    )
    late = crossing_step(
        make_t_junction("h", lead_profile="hesitate", **kw).obstacles[0], x_conflict
    )
    early = crossing_step(
        make_t_junction("s", lead_profile="surge", **kw).obstacles[0], x_conflict
    )
    assert late > base + 5
    assert early < base - 3


def test_invalid_lead_profile():
    with pytest.raises(ValueError, match="lead_profile"):
        make_t_junction("x", oncoming_speed=8.0, lead_profile="drift")


def test_straight_road_variants():
    empty = make_straight_road("s0")
    assert empty.obstacles == ()
    assert empty.path_length == pytest.approx(150.0, abs=1e-6)
    lead = make_straight_road("s1", lead_speed=6.0)
    assert len(lead.obstacles) == 1
    assert lead.obstacles[0].init[3] == 6.0


def test_lane_follow_curves():
    sc = make_lane_follow("c0")
    ys = sc.reference_path[:, 1]
    assert ys.max() > 2.0 and ys.min() < -2.0
    with_lead = make_lane_follow("c1", lead_speed=5.5)
    assert with_lead.obstacles[0].motion_type == "waypoints"


def test_weave_fixture_oscillates():
    sc = make_weave_fixture("w0")
    assert len(sc.obstacles) == 3
    assert sc.adjacency.left == "opposite"
    headings = sc.obstacles[0].waypoints[:, 2]
    # heading keeps crossing its mean: that is the weave
    swings = np.diff(np.sign(headings - headings.mean()))
    assert np.count_nonzero(swings) > 4


# ---------------------------------------------------------------------------
# corpus


def test_corpus_variant_table():
    rows = corpus_variants()
    assert len(rows) == 41
    ids = [r["scenario_id"] for r in rows]
    assert len(set(ids)) == len(ids)
    profiles = {r["lead_profile"] for r in rows}
    assert profiles == set(LEAD_PROFILES)


def test_split_is_deterministic_partition():
    items = [f"item_{i}" for i in range(41)]
    train, val, test = split_corpus(items, seed=7)
    again = split_corpus(items, seed=7)
    assert (train, val, test) == again
    assert len(train) == 30 and len(val) == 6 and len(test) == 5
    assert sorted(train + val + test) == sorted(items)
    other = split_corpus(items, seed=8)
    assert other[0] != train


def test_split_rejects_tiny_corpus():
    with pytest.raises(ValueError, match="too small"):
        split_corpus(["a", "b", "c"], seed=0)


def test_generate_corpus_writes_loadable_files(tmp_path):
    paths = generate_corpus(tmp_path)
    assert len(paths) == 46
    for path in paths:
        sc = load_scenario(path)
        assert sc.scenario_id == path.stem


def test_bundled_corpus_matches_generator(corpus_dir):
    files = sorted(corpus_dir.rglob("*.json"))
    assert len(files) == 46
    junction_files = [f for f in files if f.parent.name == "tjunction"]
    assert len(junction_files) >= 24
    for f in junction_files[:3]:
        sc = load_scenario(f)
        assert sc.scenario_id == f.stem

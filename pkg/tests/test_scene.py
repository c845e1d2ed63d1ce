"""World model tests: rasterization, agents, behavior oracle, generators."""

import numpy as np
import pytest

from semnav.core import BehaviorSpec, Pose2D, ValidationError
from semnav.sim import TASK_NAMES, DynamicAgent, Scene, generate_scene


def tiny_scene_obj(**overrides):
    obj = {
        "schema_version": 1,
        "name": "tiny",
        "resolution": 0.1,
        "extent": [0.0, 0.0, 4.0, 2.0],
        "labels": ["pavement", "grass"],
        "ground": "pavement",
        "shapes": [
            {"kind": "rect", "class": "grass", "x": [2.0, 4.0], "y": [0.0, 2.0], "height": 0.0},
        ],
        "class_risk": {"pavement": 0.1, "grass": 0.3},
        "palette": {"pavement": [128, 128, 128], "grass": [60, 160, 60]},
        "agents": [],
        "start": [0.5, 1.0, 0.0],
        "goal": [3.5, 1.0],
        "behavior": {"text": "go", "rule": "none"},
        "centerline_y": 1.0,
    }
    obj.update(overrides)
    return obj


# -- rasterization ------------------------------------------------------------


def test_scene_from_obj_grids():
    s = Scene.from_obj(tiny_scene_obj())
    assert s.width_cells == 40 and s.height_cells == 20
    assert s.class_label_at(1.0, 1.0) == "pavement"
    assert s.class_label_at(3.0, 1.0) == "grass"
    assert s.true_risk_at(1.0, 1.0) == 0.1
    assert s.true_risk_at(3.0, 1.0) == 0.3


def test_scene_out_of_bounds_lookups():
    s = Scene.from_obj(tiny_scene_obj())
    assert s.cell_index(-1.0, 1.0) is None
    assert s.class_label_at(-1.0, 1.0) is None
    assert s.true_risk_at(99.0, 99.0) == 0.0


def test_scene_rect_height_sets_height_grid():
    obj = tiny_scene_obj(
        shapes=[{"kind": "rect", "class": "grass", "x": [1.0, 1.5], "y": [0.0, 2.0], "height": 2.0}]
    )
    s = Scene.from_obj(obj)
    iy, ix = 10, 12  # (1.25, 1.05)
    assert s.height_grid[iy, ix] == 2.0
    assert s.height_grid[10, 2] == 0.0


def test_scene_disc_shape_stamped_by_cell_center():
    obj = tiny_scene_obj(
        shapes=[{"kind": "disc", "class": "grass", "cx": 2.0, "cy": 1.0, "r": 0.3, "height": 0.5}]
    )
    s = Scene.from_obj(obj)
    assert s.class_label_at(2.0, 1.0) == "grass"
    assert s.class_label_at(2.0, 1.45) == "pavement"  # outside r by cell center
    assert s.height_grid[s.cell_index(2.0, 1.0)] == 0.5


def test_scene_goal_class_must_be_in_labels():
    with pytest.raises(ValidationError):
        Scene.from_obj(tiny_scene_obj(goal="cone"))


def test_scene_risk_out_of_range_rejected():
    with pytest.raises(ValidationError):
        Scene.from_obj(tiny_scene_obj(class_risk={"pavement": 1.5, "grass": 0.3}))


def test_goal_truth_metric_and_class_modes():
    s = Scene.from_obj(tiny_scene_obj())
    g = s.goal_truth()
    assert (g.x, g.y) == (3.5, 1.0)
    # class goal: centroid of the grass half is x ~ 3.0, y ~ 1.0
    s2 = Scene.from_obj(tiny_scene_obj(goal="grass"))
    g2 = s2.goal_truth()
    assert abs(g2.x - 3.0) <= 0.06
    assert abs(g2.y - 1.0) <= 0.06


# -- serialization ------------------------------------------------------------


def test_scene_yaml_round_trip(tmp_path):
    s = generate_scene("footpath-right", 3)
    p = tmp_path / "scene.yaml"
    s.save(str(p))
    s2 = Scene.load(str(p))
    assert s.digest() == s2.digest()
    assert np.array_equal(s.class_grid, s2.class_grid)
    assert np.array_equal(s.risk_grid, s2.risk_grid)
    assert np.array_equal(s.height_grid, s2.height_grid)
    assert s.behavior == s2.behavior
    assert [a.trajectory for a in s.agents] == [a.trajectory for a in s2.agents]


def test_scene_digest_covers_contents():
    a = Scene.from_obj(tiny_scene_obj())
    b = Scene.from_obj(tiny_scene_obj(start=[0.6, 1.0, 0.0]))
    assert a.digest() != b.digest()


# -- agents ------------------------------------------------------------------


def walker(**kw):
    args = dict(
        label="person",
        radius=0.25,
        risk=0.7,
        height=1.7,
        trajectory=((0.0, 0.0, 0.0), (10.0, 5.0, 0.0)),
    )
    args.update(kw)
    return DynamicAgent(**args)


def test_agent_position_interpolates_and_clamps():
    a = walker()
    assert a.position(-1.0) == (0.0, 0.0)
    assert a.position(5.0) == (2.5, 0.0)
    assert a.position(99.0) == (5.0, 0.0)


def test_agent_rejects_bad_fields():
    with pytest.raises(ValidationError):
        walker(radius=0.0)
    with pytest.raises(ValidationError):
        walker(risk=1.5)
    with pytest.raises(ValidationError):
        walker(trajectory=())


def test_stamped_grids_move_with_time():
    obj = tiny_scene_obj(
        labels=["pavement", "grass", "person"],
        class_risk={"pavement": 0.1, "grass": 0.3, "person": 0.7},
        palette={
            "pavement": [128, 128, 128],
            "grass": [60, 160, 60],
            "person": [210, 180, 140],
        },
        agents=[
            {
                "class": "person",
                "radius": 0.25,
                "risk": 0.7,
                "height": 1.7,
                "trajectory": [[0.0, 0.5, 0.5], [10.0, 3.5, 0.5]],
            }
        ],
    )
    s = Scene.from_obj(obj)
    person_idx = s.labels.index("person")
    cls0, hgt0 = s.stamped_grids(0.0)
    cls5, _ = s.stamped_grids(5.0)
    at_start = s.cell_index(0.5, 0.5)
    assert cls0[at_start] == person_idx
    assert hgt0[at_start] == 1.7
    assert cls5[at_start] != person_idx  # walked away
    assert cls5[s.cell_index(2.0, 0.5)] == person_idx
    # base grids untouched
    assert s.class_grid[at_start] != person_idx


# -- behavior oracle ----------------------------------------------------------


def test_violation_stay_right_of_centerline():
    s = Scene.from_obj(tiny_scene_obj(behavior={"text": "keep right", "rule": "stay_right_of_centerline"}))
    # centerline y=1.0; "right" in travel direction (+x) is y < centerline
    below = np.array([[0.5, 0.5], [2.5, 0.5]])
    above = np.array([[0.5, 1.5], [2.5, 1.5]])
    assert s.violation_length(below) == 0.0
    assert s.violation_length(above) == pytest.approx(2.0, abs=0.05)


def test_violation_center_band_half_in():
    s = Scene.from_obj(
        tiny_scene_obj(
            behavior={"text": "stay centered", "rule": "stay_center_band"},
            band_halfwidth=0.3,
        )
    )
    # straight diagonal from inside the band to far outside it
    path = np.array([[1.0, 1.0], [1.0, 1.6]])
    v = s.violation_length(path)
    assert v == pytest.approx(0.3, abs=0.05)


def test_violation_avoid_class_counts_only_target_cells():
    s = Scene.from_obj(
        tiny_scene_obj(behavior={"text": "avoid the grass", "rule": "avoid_class:grass"})
    )
    # 1 m on pavement then 1 m on grass
    path = np.array([[1.5, 1.0], [2.5, 1.0]])
    v = s.violation_length(path)
    assert v == pytest.approx(0.5, abs=0.06)


def test_violation_rule_none_is_zero():
    s = Scene.from_obj(tiny_scene_obj())
    path = np.array([[0.5, 0.5], [3.5, 1.8]])
    assert s.violation_length(path) == 0.0


def test_violation_accepts_pose_sequences():
    s = Scene.from_obj(tiny_scene_obj(behavior={"text": "keep right", "rule": "stay_right_of_centerline"}))
    poses = [Pose2D(0.5, 1.5), Pose2D(1.5, 1.5)]
    assert s.violation_length(poses) == pytest.approx(1.0, abs=0.05)


def test_violation_explicit_behavior_overrides_scene():
    s = Scene.from_obj(tiny_scene_obj())
    rule = BehaviorSpec("keep right", "stay_right_of_centerline")
    path = np.array([[0.5, 1.5], [1.5, 1.5]])
    assert s.violation_length(path, rule) == pytest.approx(1.0, abs=0.05)


# -- generators ----------------------------------------------------------------


def test_generators_cover_all_tasks_and_are_seed_deterministic():
    for task in TASK_NAMES:
        a = generate_scene(task, 7)
        b = generate_scene(task, 7)
        assert a.digest() == b.digest()
        assert a.name == task


def test_generators_vary_with_seed():
    for task in TASK_NAMES:
        a = generate_scene(task, 1)
        b = generate_scene(task, 2)
        assert a.digest() != b.digest(), task


def test_unknown_task_rejected():
    with pytest.raises(ValidationError):
        generate_scene("no-such-task", 0)


def test_footpath_scenes_have_pavement_band_and_behavior():
    r = generate_scene("footpath-right", 5)
    assert r.behavior.oracle_rule == "stay_right_of_centerline"
    assert r.class_label_at(10.0, 0.0) == "pavement"
    assert r.class_label_at(10.0, 4.0) == "grass"
    c = generate_scene("footpath-center", 5)
    assert c.behavior.oracle_rule == "stay_center_band"


def test_human_crossing_walker_is_slower_than_robot():
    s = generate_scene("human-crossing", 9)
    assert len(s.agents) == 1
    (t0, x0, y0), (t1, x1, y1) = s.agents[0].trajectory[0], s.agents[0].trajectory[-1]
    speed = abs(y1 - y0) / (t1 - t0)
    assert 0.1 <= speed <= 0.2


def test_bench_field_goal_is_cone_class():
    s = generate_scene("bench-field", 4)
    assert s.goal == "cone"
    g = s.goal_truth()
    assert 9.5 <= g.x <= 12.0
    cone = [sh for sh in s.source["shapes"] if sh["class"] == "cone"][0]
    assert cone["height"] > 0  # visible at range


def test_paper_indoor_has_avoid_rule_and_walls():
    s = generate_scene("paper-indoor", 2)
    assert s.behavior.oracle_rule == "avoid_class:paper"
    assert s.class_label_at(4.0, 2.0) == "wall"
    assert s.true_risk_at(4.0, 2.0) == 1.0

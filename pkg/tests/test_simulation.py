import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rntc.errors import ConfigError
from rntc.geometry import Obstacle
from rntc.simulation import (RESULT_COLUMNS, Scenario, World, advance_obstacle, collides,
                             make_planner, make_scenarios, read_results, run_benchmark, run_episode,
                             scenario_hash, step_world, summarize, swept_collision, write_results)

CORRIDOR = (0.0, 0.0, 12.0, 8.0)


def test_make_scenarios_deterministic():
    a, b = make_scenarios(4, 20), make_scenarios(4, 20)
    assert a == b and scenario_hash(a) == scenario_hash(b)
    assert scenario_hash(make_scenarios(5, 20)) != scenario_hash(a)
    assert len(make_scenarios(0)) == 100


def test_scenarios_inside_corridor():
    for s in make_scenarios(1, 50):
        assert len(s.obstacles) == 6
        x0, y0, x1, y1 = s.corridor
        for o in s.obstacles:
            assert x0 + o.radius <= o.center[0] <= x1 - o.radius
            assert y0 + o.radius <= o.center[1] <= y1 - o.radius
            assert np.hypot(*o.velocity) <= 1.0
        assert np.hypot(s.goal[0] - s.start[0], s.goal[1] - s.start[1]) == 10.0


def test_bounce_mirror_law():
    # 0.05 m from the wall (center at x1 - r - 0.05), moving outward at 1 m/s
    o = Obstacle((12.0 - 0.3 - 0.05, 4.0), 0.3, (1.0, 0.0))
    n = advance_obstacle(o, 0.1, CORRIDOR)
    assert n.velocity == (-1.0, 0.0)
    assert n.center[0] == pytest.approx(12.0 - 0.3 - 0.05)
    assert n.center[0] + n.radius <= 12.0


def test_free_flight_is_constant_velocity():
    o = Obstacle((5.0, 4.0), 0.3, (0.3, -0.4))
    n = advance_obstacle(o, 0.1, CORRIDOR)
    assert n.center == pytest.approx((5.03, 3.96))
    assert n.velocity == o.velocity


@given(st.floats(0.3, 11.7), st.floats(0.3, 7.7), st.floats(-math.pi, math.pi), st.floats(0, 1),
       st.integers(1, 200))
def test_obstacles_never_leave_corridor(x, y, heading, speed, steps):
    o = Obstacle((x, y), 0.3, (speed * math.cos(heading), speed * math.sin(heading)))
    for _ in range(steps):
        o = advance_obstacle(o, 0.1, CORRIDOR)
        assert 0.3 - 1e-12 <= o.center[0] <= 11.7 + 1e-12
        assert 0.3 - 1e-12 <= o.center[1] <= 7.7 + 1e-12
        assert np.hypot(*o.velocity) == pytest.approx(speed)


def test_step_world_advances_robot_and_time():
    w = World((1.0, 4.0, 0.0), (Obstacle((5.0, 4.0), 0.3, (0.0, 1.0)),), CORRIDOR)
    n = step_world(w, 0.1, (0.5, 0.0))
    assert n.robot == pytest.approx((1.05, 4.0, 0.0))
    assert n.time == pytest.approx(0.1)
    assert n.obstacles[0].center == pytest.approx((5.0, 4.1))


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 0.5), st.floats(0.1, 0.5))
def test_collision_symmetric(dx, dy, r1, r2):
    a = Obstacle((0.0, 0.0), r2)
    b = Obstacle((dx, dy), r1)
    assert collides((dx, dy), [a], r1) == collides((0.0, 0.0), [b], r2)
    assert collides((dx, dy), [a], r1) == (np.hypot(dx, dy) < r1 + r2)


def test_swept_collision_catches_tunneling():
    # a fast obstacle crossing the robot within one step: both endpoints clear
    w = World((5.0, 4.0, 0.0), (Obstacle((5.0, 3.5), 0.1, (0.0, 10.0)),), CORRIDOR)
    assert not collides(w.robot, w.obstacles, 0.3)
    assert not collides(step_world(w, 0.1, (0, 0)).robot, step_world(w, 0.1, (0, 0)).obstacles, 0.3)
    assert swept_collision(w, (0.0, 0.0), 0.1, 0.3)


def test_empty_corridor_episode():
    s = Scenario(0, 0, ())
    r = run_episode(s, "sdf", 10)
    assert r.success and not r.collision and not r.timeout
    assert r.d_max <= 1e-6
    assert r.travel_time == pytest.approx((10.0 - s.goal_tolerance) / 0.5, rel=0.1)
    assert r.d_mean <= r.d_max
    assert r.opt_time_mean > 0


def test_obstacle_parked_on_goal_never_succeeds():
    s = Scenario(0, 0, (Obstacle((11.0, 4.0), 0.3),), time_limit=30.0)
    for mode in ("sdf", "none"):
        r = run_episode(s, mode, 10)
        assert not r.success
        assert r.timeout or r.collision
        assert r.success + r.collision + r.timeout == 1


def test_episode_deterministic():
    s = make_scenarios(0, 1)[0]
    s = Scenario(s.scenario_id, s.seed, s.obstacles, time_limit=6.0)
    a, b = run_episode(s, "dcbf", 5), run_episode(s, "dcbf", 5)
    keep = [c for c in RESULT_COLUMNS if not c.startswith("opt_time")]
    assert {k: a.row()[k] for k in keep} == {k: b.row()[k] for k in keep}
    assert np.array_equal(a.trajectory, b.trajectory)


def test_rntc_needs_checkpoint():
    with pytest.raises(ConfigError):
        make_planner("rntc", 10)
    with pytest.raises(ConfigError):
        run_benchmark([Scenario(0, 0, ())], ["rntc"], [5])


def test_single_row_table_and_files(tmp_path):
    sc = [Scenario(0, 0, (), time_limit=3.0)]
    res = run_benchmark(sc, ["none"], [5])
    assert len(res) == 1
    paths = write_results(tmp_path, res, scenario_hash(sc), "abc")
    assert {p.name for p in paths} == {"results.csv", "success_vs_N.csv", "opt_time_vs_N.csv",
                                        "travel_time_vs_N.csv", "pareto.csv"}
    rows = read_results(tmp_path / "results.csv")
    assert len(rows) == 1 and list(rows[0]) == RESULT_COLUMNS
    text = (tmp_path / "results.csv").read_text()
    assert f"# scenario_hash={scenario_hash(sc)}" in text and "# config_hash=abc" in text
    summ = summarize(res)
    assert len(summ) == 1 and summ[0]["episodes"] == 1


def test_benchmark_order_and_parallel_agree():
    sc = [Scenario(i, 0, (Obstacle((6.0, 4.0 + i), 0.3, (0.0, 0.5)),), time_limit=2.0)
          for i in range(2)]
    seq = run_benchmark(sc, ["sdf", "none"], [5], workers=1)
    par = run_benchmark(sc, ["sdf", "none"], [5], workers=2)
    assert [(r.mode, r.N, r.scenario_id) for r in seq] == [("sdf", 5, 0), ("sdf", 5, 1),
                                                           ("none", 5, 0), ("none", 5, 1)]
    keep = [c for c in RESULT_COLUMNS if not c.startswith("opt_time")]
    assert [{k: r.row()[k] for k in keep} for r in seq] == [{k: r.row()[k] for k in keep} for r in par]

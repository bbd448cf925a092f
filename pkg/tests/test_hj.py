import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rntc.errors import ConfigError
from rntc.geometry import F_MAX, Obstacle, make_snapshot
from rntc.hj import (StateGrid, ValueGrid, backward_step, cfl_limit, failure_from_snapshot,
                     hamiltonian, interpolate, lax_friedrichs_rate, solve_brt)
from rntc.neural.loss import iou

DESK = StateGrid.desk()


def _interior(grid, margin=1.0):
    xs, ys, _ = grid.axes()
    lo = np.array(grid.lower) + margin
    hi = np.array(grid.lower) + grid.size - margin
    mx = (xs > lo[0]) & (xs < hi[0])
    my = (ys > lo[1]) & (ys < hi[1])
    return mx[:, None, None] & my[None, :, None]


def test_hamiltonian_examples():
    assert hamiltonian(0.0, (1, 0, 0)) == pytest.approx(0.5)
    assert hamiltonian(1.3, (0, 0, 0)) == 0.0
    assert hamiltonian(math.pi / 2, (1, 0, 2)) == pytest.approx(1.0)


@given(st.floats(-math.pi, math.pi), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_hamiltonian_dominates_control_grid(theta, g):
    v, w = np.meshgrid(np.linspace(-0.5, 0.5, 41), np.linspace(-0.5, 0.5, 41))
    brute = np.max(g[0] * v * math.cos(theta) + g[1] * v * math.sin(theta) + g[2] * w)
    H = hamiltonian(theta, g)
    assert H >= brute - 1e-12
    assert H - brute <= 0.02 * np.linalg.norm(g) + 1e-12


def test_cfl_limit_value():
    dx, dy, dth = DESK.spacing
    assert cfl_limit(DESK) == pytest.approx(1 / (0.5 / dx + 0.5 / dy + 0.5 / dth))


def test_backward_step_fixed_point():
    V = ValueGrid(np.full(DESK.shape, 2.0), DESK, 1.0)
    out = backward_step(V, np.full(DESK.shape, 2.0), 0.5 * cfl_limit(DESK))
    assert np.array_equal(out.values, V.values)
    assert out.time_label == pytest.approx(1.0 - 0.5 * cfl_limit(DESK))


def test_backward_step_clamps_to_failure(rng):
    V = ValueGrid(np.full(DESK.shape, 3.0), DESK)
    F = rng.uniform(-1, 5, DESK.shape[:2])
    out = backward_step(V, F, 0.1 * cfl_limit(DESK))
    low = F < 3.0
    assert np.array_equal(out.values[low], np.broadcast_to(F[..., None], DESK.shape)[low])
    assert np.all(out.values <= F[..., None])


def test_backward_step_cfl_violation():
    V = ValueGrid(np.zeros(DESK.shape), DESK)
    with pytest.raises(ConfigError):
        backward_step(V, np.zeros(DESK.shape[:2]), 1.01 * cfl_limit(DESK))


def test_lax_friedrichs_batch_axis(rng):
    V = rng.normal(size=(2,) + DESK.shape)
    batched = lax_friedrichs_rate(V, DESK)
    assert np.allclose(batched[1], lax_friedrichs_rate(V[1], DESK))


def test_obstacle_free_stays_fmax():
    fn = failure_from_snapshot(make_snapshot([]), DESK)
    res = solve_brt(fn, DESK, 2.0)
    assert np.max(np.abs(res.value.values - F_MAX)) <= 1e-6
    assert res.converged


def test_static_obstacle_value_equals_failure_desk():
    snap = make_snapshot([Obstacle((0.4, -0.3), 0.5)])
    fn = failure_from_snapshot(snap, DESK)
    res = solve_brt(fn, DESK, 4.0)
    F = fn(0.0)[..., None]
    diff = np.abs(res.value.values - F)[np.broadcast_to(_interior(DESK), DESK.shape)]
    assert diff.max() <= 0.15


def test_head_on_obstacle_shrinks_safe_set():
    snap = make_snapshot([Obstacle((2.0, 0.0), 0.3, (-1.0, 0.0))])
    fn = failure_from_snapshot(snap, DESK)
    res = solve_brt(fn, DESK, 6.0)
    F = np.broadcast_to(fn(0.0)[..., None], DESK.shape)
    V = res.value.values
    assert np.all(V <= F)
    # states facing the oncoming obstacle, outside its disk, that cannot escape
    assert np.any((V < 0) & (F > 0))
    # a state right in its path: robot at (0.5, 0) facing +x, obstacle edge 0.9 m away closing at 1 m/s
    v, _ = interpolate(res.value, (0.5, 0.0, 0.0))
    f = float(fn(0.0)[np.argmin(np.abs(DESK.axes()[0] - 0.5)), np.argmin(np.abs(DESK.axes()[1]))])
    assert v < f


@pytest.fixture(scope="module")
def moving_solution():
    snap = make_snapshot([Obstacle((1.5, 0.5), 0.3, (-0.6, 0.2)), Obstacle((-2, -1), 0.4, (0.3, 0.5))])
    fn = failure_from_snapshot(snap, DESK)
    return fn, solve_brt(fn, DESK, 4.0)


def test_value_dominated_by_failure(moving_solution):
    fn, res = moving_solution
    assert np.all(res.value.values <= fn(0.0)[..., None])


def test_brt_contains_failure_set(moving_solution):
    fn, res = moving_solution
    F = np.broadcast_to(fn(0.0)[..., None], DESK.shape)
    assert np.all(res.value.values[F < 0] < 0)


def test_monotone_backward_sweeps_static():
    snap = make_snapshot([Obstacle((0.0, 0.0), 0.6)])
    fn = failure_from_snapshot(snap, DESK)
    F = fn(0.0)
    V = ValueGrid(np.broadcast_to(F[..., None], DESK.shape).copy(), DESK, 2.0)
    dt = 0.5 * cfl_limit(DESK)
    for _ in range(20):
        nxt = backward_step(V, F, dt)
        assert np.all(nxt.values <= V.values + 1e-12)
        V = nxt


def test_non_convergence_is_flagged():
    snap = make_snapshot([Obstacle((3.0, 0.0), 0.3, (-1.0, 0.0))])
    res = solve_brt(failure_from_snapshot(snap, DESK), DESK, 0.3, tol=1e-6)
    assert not res.converged
    assert res.value.values.shape == DESK.shape


def test_interpolate_nodes_and_periodicity(rng):
    grid = StateGrid(6, 7, 8)
    V = ValueGrid(rng.normal(size=grid.shape), grid)
    xs, ys, ts = grid.axes()
    v, ok = interpolate(V, (xs[2], ys[3], ts[5]))
    assert ok and v == pytest.approx(V.values[2, 3, 5])
    eps = 1e-9
    v, _ = interpolate(V, (xs[1], ys[1], 2 * math.pi - eps))
    assert v == pytest.approx(V.values[1, 1, 0], abs=1e-6)
    half = (ts[-1] + 2 * math.pi) / 2
    v, _ = interpolate(V, (xs[1], ys[1], half))
    assert v == pytest.approx(0.5 * (V.values[1, 1, -1] + V.values[1, 1, 0]))


def test_interpolate_constant_and_out_of_bounds():
    grid = StateGrid(5, 5, 4)
    V = ValueGrid(np.full(grid.shape, 1.25), grid)
    pts = np.array([[0.1, -0.2, 1.0], [30.0, 0.0, 0.0], [0.0, -30.0, -7.0]])
    vals, ok = interpolate(V, pts)
    assert np.allclose(vals, 1.25)
    assert ok.tolist() == [True, False, False]


def test_resolution_convergence_trend():
    snap = make_snapshot([Obstacle((1.2, 0.3), 0.4, (-0.7, 0.1))])
    grids = [StateGrid(20, 20, 8), StateGrid(40, 40, 16), StateGrid(80, 80, 32)]
    sols = [solve_brt(failure_from_snapshot(snap, g), g, 2.0) for g in grids]
    fine = sols[-1].value
    nodes = grids[-1].states().reshape(-1, 3)
    ious = []
    for s in sols[:-1]:
        coarse_on_fine, _ = interpolate(s.value, nodes)
        ious.append(iou(coarse_on_fine, fine.values.reshape(-1)))
    assert ious[1] >= ious[0]
    assert 1 - ious[1] < 1 - ious[0] or ious[1] == 1.0

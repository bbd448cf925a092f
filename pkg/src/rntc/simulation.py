"""Closed-loop corridor benchmark: bouncing obstacles, collision checks, metrics."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from rntc.errors import ConfigError
from rntc.geometry import Obstacle
from rntc.mpc import MpcConfig, Planner, ReferencePath, step_dynamics

log = logging.getLogger(__name__)

N_OBSTACLES = 6
RESULT_COLUMNS = ["scenario_id", "mode", "N", "success", "collision", "timeout", "travel_time_s",
                  "d_mean_m", "d_max_m", "opt_time_mean_ms", "opt_time_std_ms"]
TIMING_COLUMNS = ("opt_time_mean_ms", "opt_time_std_ms")


@dataclass(frozen=True)
class Scenario:
    scenario_id: int
    seed: int
    obstacles: tuple[Obstacle, ...]
    corridor: tuple[float, float, float, float] = (0.0, 0.0, 12.0, 8.0)  # xmin, ymin, xmax, ymax
    start: tuple[float, float, float] = (1.0, 4.0, 0.0)
    goal: tuple[float, float] = (11.0, 4.0)
    goal_tolerance: float = 0.2
    time_limit: float = 60.0
    robot_radius: float = 0.3

    def reference(self, spacing: float = 0.05) -> ReferencePath:
        return ReferencePath(self.start[:2], self.goal, spacing)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["obstacles"] = [[*o.center, o.radius, *o.velocity] for o in self.obstacles]
        return d


def make_scenarios(seed: int, count: int = 100, *, n_obstacles: int = N_OBSTACLES,
                   radius: float = 0.3, max_speed: float = 1.0, clearance: float = 1.5,
                   **kw) -> list[Scenario]:
    """Random obstacle initializations, reproducible per (seed, index).

    Obstacles start inside the corridor and at least ``clearance`` from the
    robot start and the goal; speeds are uniform in [0, max_speed].
    """
    base = Scenario(0, seed, (), **kw)
    x0, y0, x1, y1 = base.corridor
    out = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        obs = []
        while len(obs) < n_obstacles:
            c = rng.uniform([x0 + radius, y0 + radius], [x1 - radius, y1 - radius])
            speed = rng.uniform(0.0, max_speed)
            heading = rng.uniform(-math.pi, math.pi)
            if (np.hypot(*(c - base.start[:2])) < clearance
                    or np.hypot(*(c - np.asarray(base.goal))) < clearance):
                continue
            obs.append(Obstacle(tuple(c), radius, (speed * math.cos(heading), speed * math.sin(heading))))
        out.append(replace(base, scenario_id=i, obstacles=tuple(obs)))
    return out


def scenario_hash(scenarios: Sequence[Scenario]) -> str:
    blob = json.dumps([s.to_dict() for s in scenarios], sort_keys=True).encode()
    return hashlib.blake2b(blob, digest_size=16).hexdigest()


def _reflect(p: float, v: float, lo: float, hi: float) -> tuple[float, float]:
    # mirror law; loops only if one step crosses the corridor more than once
    while p < lo or p > hi:
        if p < lo:
            p, v = 2 * lo - p, -v
        else:
            p, v = 2 * hi - p, -v
    return p, v


def advance_obstacle(o: Obstacle, dt: float, corridor) -> Obstacle:
    x0, y0, x1, y1 = corridor
    r = o.radius
    px, vx = _reflect(o.center[0] + dt * o.velocity[0], o.velocity[0], x0 + r, x1 - r)
    py, vy = _reflect(o.center[1] + dt * o.velocity[1], o.velocity[1], y0 + r, y1 - r)
    return Obstacle((px, py), r, (vx, vy))


@dataclass(frozen=True)
class World:
    robot: tuple[float, float, float]
    obstacles: tuple[Obstacle, ...]
    corridor: tuple[float, float, float, float]
    time: float = 0.0
    control: tuple[float, float] = (0.0, 0.0)


def step_world(world: World, dt: float, control=None) -> World:
    """Advance obstacles (bouncing) and the robot under ``control`` by dt."""
    u = world.control if control is None else tuple(float(c) for c in control)
    robot = step_dynamics(np.asarray(world.robot), np.asarray(u), dt)
    obs = tuple(advance_obstacle(o, dt, world.corridor) for o in world.obstacles)
    return World(tuple(float(v) for v in robot), obs, world.corridor, world.time + dt, u)


def collides(robot_xy, obstacles: Sequence[Obstacle], robot_radius: float) -> bool:
    p = np.asarray(robot_xy, dtype=float)[:2]
    return any(np.hypot(*(p - np.asarray(o.center))) < robot_radius + o.radius for o in obstacles)


def swept_collision(world: World, control, dt: float, robot_radius: float, samples: int = 10) -> bool:
    """Collision check at ``samples`` evenly spaced instants within (0, dt]."""
    x = np.asarray(world.robot)
    u = np.asarray(control, dtype=float)
    for k in range(1, samples + 1):
        s = dt * k / samples
        xs = step_dynamics(x, u, s)
        obs = [advance_obstacle(o, s, world.corridor) for o in world.obstacles]
        if collides(xs, obs, robot_radius):
            return True
    return False


@dataclass
class EpisodeResult:
    scenario_id: int
    mode: str
    N: int
    success: bool
    collision: bool
    timeout: bool
    travel_time: float
    d_mean: float
    d_max: float
    opt_time_mean: float  # ms
    opt_time_std: float   # ms
    step_time_mean: float = 0.0  # ms, whole plan_step including the hypernetwork
    relaxed_steps: int = 0
    planner_failures: int = 0
    trajectory: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)), repr=False)

    def row(self) -> dict:
        return {"scenario_id": self.scenario_id, "mode": self.mode, "N": self.N,
                "success": int(self.success), "collision": int(self.collision),
                "timeout": int(self.timeout), "travel_time_s": round(self.travel_time, 6),
                "d_mean_m": round(self.d_mean, 6), "d_max_m": round(self.d_max, 6),
                "opt_time_mean_ms": round(self.opt_time_mean, 3),
                "opt_time_std_ms": round(self.opt_time_std, 3)}


def make_planner(mode: str, N: int, checkpoint=None, **mpc_kw) -> Planner:
    if mode == "rntc":
        if checkpoint is None:
            raise ConfigError("rntc mode requires a trained checkpoint")
        if checkpoint.main_spec.mode != "rntc":
            raise ConfigError("checkpoint was not trained in rntc mode")
        cfg = MpcConfig(N=N, mode=mode, sdf_size=checkpoint.net.spec.in_size, **mpc_kw)
        return Planner(cfg, checkpoint.net, checkpoint.main_spec)
    return Planner(MpcConfig(N=N, mode=mode, **mpc_kw))


def run_episode(scenario: Scenario, mode: str, N: int, checkpoint=None, *,
                planner: Planner | None = None, dt: float = 0.1) -> EpisodeResult:
    planner = planner or make_planner(mode, N, checkpoint, dt=dt)
    planner.reset()
    ref = scenario.reference(planner.config.v_max * dt)
    world = World(scenario.start, scenario.obstacles, scenario.corridor)
    traj = [world.robot]
    opt_times, step_times = [], []
    relaxed = failures = 0
    n_steps = int(round(scenario.time_limit / dt))
    outcome = "timeout"
    goal = np.asarray(scenario.goal)
    if collides(world.robot, world.obstacles, scenario.robot_radius):
        outcome = "collision"
        n_steps = 0
    for _ in range(n_steps):
        try:
            plan = planner.plan_step(world.robot, world.obstacles, ref, world.time)
            u = plan.control
            opt_times.append(plan.solution.solve_time * 1e3)
            step_times.append(plan.wall_time * 1e3)
            relaxed += plan.solution.status == "infeasible-relaxed"
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
            log.warning("planner failure in scenario %d: %s", scenario.scenario_id, e)
            failures += 1
            planner.reset()
            u = np.zeros(2)
        hit = swept_collision(world, u, dt, scenario.robot_radius)
        world = step_world(world, dt, u)
        traj.append(world.robot)
        if hit:
            outcome = "collision"
            break
        if np.hypot(*(np.asarray(world.robot[:2]) - goal)) <= scenario.goal_tolerance:
            outcome = "success"
            break
    traj = np.asarray(traj)
    dev = np.array([ref.lateral_deviation(p) for p in traj])
    ot = np.asarray(opt_times) if opt_times else np.zeros(1)
    return EpisodeResult(scenario.scenario_id, mode, N, outcome == "success", outcome == "collision",
                         outcome == "timeout", round(world.time, 10), float(dev.mean()),
                         float(dev.max()), float(ot.mean()), float(ot.std()),
                         float(np.mean(step_times)) if step_times else 0.0, relaxed, failures, traj)


def _episode_job(args):
    scenario, mode, N, ckpt_path, mpc_kw = args
    ckpt = None
    if mode == "rntc":
        from rntc.neural.checkpoint import load_checkpoint
        ckpt = load_checkpoint(ckpt_path)
    return run_episode(scenario, mode, N, planner=make_planner(mode, N, ckpt, **mpc_kw))


def run_benchmark(scenarios: Sequence[Scenario], modes: Sequence[str], horizons: Sequence[int],
                  checkpoint=None, *, workers: int = 1, checkpoint_path=None,
                  mpc_kw: dict | None = None, progress: Callable[[EpisodeResult], None] | None = None) -> list[EpisodeResult]:
    """modes x horizons x scenarios; results sorted by (mode, N, scenario_id)."""
    if "rntc" in modes and checkpoint is None and checkpoint_path is None:
        raise ConfigError("rntc mode requires a trained checkpoint")
    mpc_kw = mpc_kw or {}
    results = []
    if workers > 1:
        if "rntc" in modes and checkpoint_path is None:
            raise ConfigError("parallel rntc benchmark needs a checkpoint path")
        jobs = [(s, m, n, checkpoint_path, mpc_kw) for m in modes for n in horizons for s in scenarios]
        with ProcessPoolExecutor(workers) as ex:
            for r in ex.map(_episode_job, jobs, chunksize=4):
                results.append(r)
                if progress:
                    progress(r)
    else:
        for m in modes:
            for n in horizons:
                planner = make_planner(m, n, checkpoint, **mpc_kw)
                for s in scenarios:
                    r = run_episode(s, m, n, planner=planner)
                    results.append(r)
                    if progress:
                        progress(r)
    order = {m: i for i, m in enumerate(modes)}
    return sorted(results, key=lambda r: (order[r.mode], r.N, r.scenario_id))


# ---------------------------------------------------------------- output

def summarize(results: Sequence[EpisodeResult]) -> list[dict]:
    """Aggregate rows per (mode, N) in first-seen order."""
    groups: dict[tuple, list[EpisodeResult]] = {}
    for r in results:
        groups.setdefault((r.mode, r.N), []).append(r)
    rows = []
    for (mode, N), rs in groups.items():
        ok = [r for r in rs if r.success]
        rows.append({
            "mode": mode, "N": N, "episodes": len(rs),
            "success_rate": sum(r.success for r in rs) / len(rs),
            "collision_rate": sum(r.collision for r in rs) / len(rs),
            "timeout_rate": sum(r.timeout for r in rs) / len(rs),
            "travel_time_mean_s": float(np.mean([r.travel_time for r in ok])) if ok else float("nan"),
            "d_mean_m": float(np.mean([r.d_mean for r in ok])) if ok else float("nan"),
            "d_max_m": float(np.mean([r.d_max for r in ok])) if ok else float("nan"),
            "opt_time_mean_ms": float(np.mean([r.opt_time_mean for r in rs])),
            "opt_time_std_ms": float(np.mean([r.opt_time_std for r in rs])),
            "step_time_mean_ms": float(np.mean([r.step_time_mean for r in rs])),
        })
    return rows


def _write_csv(path, header: list[str], rows: list[dict], comments: dict):
    with open(path, "w", newline="") as fh:
        for k, v in comments.items():
            fh.write(f"# {k}={v}\n")
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (round(v, 6) if isinstance(v, float) else v) for k, v in r.items()})


def write_results(out_dir, results: Sequence[EpisodeResult], scen_hash: str,
                  config_hash: str = "") -> list[Path]:
    """results.csv plus one plot-data CSV per figure family."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"scenario_hash": scen_hash}
    if config_hash:
        meta["config_hash"] = config_hash
    summary = summarize(results)
    files = {
        "results.csv": (RESULT_COLUMNS, [r.row() for r in results]),
        "success_vs_N.csv": (["mode", "N", "episodes", "success_rate", "collision_rate",
                              "timeout_rate"], summary),
        "opt_time_vs_N.csv": (["mode", "N", "opt_time_mean_ms", "opt_time_std_ms",
                               "step_time_mean_ms"], summary),
        "travel_time_vs_N.csv": (["mode", "N", "travel_time_mean_s", "d_mean_m", "d_max_m"], summary),
        "pareto.csv": (["mode", "N", "success_rate", "travel_time_mean_s"], summary),
    }
    paths = []
    for name, (header, rows) in files.items():
        _write_csv(out / name, header, rows, meta)
        paths.append(out / name)
    return paths


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))

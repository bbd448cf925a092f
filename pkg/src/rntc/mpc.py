"""Multiple-shooting MPC for the unicycle with SDF stage constraints and a
pluggable terminal constraint.

Terminal modes:
    rntc  stage SDF constraints, terminal F_N(p) - R(x_N) >= 0 with R from the main network
    sdf   SDF constraints at every stage including the last
    dcbf  F_{i+1}(x_{i+1}) >= (1 - gamma_cbf) F_i(x_i) for every stage, no terminal set
    none  no obstacle constraints (diagnostic)

F is a minimum over obstacles, so every constraint is imposed per obstacle,
which is equivalent and smooth. Inequalities carry an L1-penalized slack so
a plan is always returned; control bounds are hard.

The NLP is solved by SQP: Gauss-Newton Hessian of the quadratic cost, QP
subproblems by a dual active-set solver (quadprog), backtracking on the
L1 exact-penalty merit.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import quadprog

from rntc.errors import ConfigError
from rntc.geometry import (DEFAULT_INFLATION, F_MAX, WINDOW_SIZE, EnvironmentSnapshot, GridSpec,
                           Obstacle, rasterize, shift)
from rntc.neural.hypernet import HyperNet, hyper_forward
from rntc.neural.mainnet import MainNetSpec, StateNormalizer, main_value_and_grad, wrap_angle

MODES = ("rntc", "sdf", "dcbf", "none")


def _psd(M, name: str, strict: bool = False) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] == 1 and M.shape[1] > 1:
        M = np.diag(M[0])
    if not np.allclose(M, M.T):
        raise ConfigError(f"{name} must be symmetric")
    ev = np.linalg.eigvalsh(M)
    if ev.min() < 0 or (strict and ev.min() <= 0):
        raise ConfigError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")
    return M


@dataclass
class MpcConfig:
    N: int = 10
    dt: float = 0.1
    Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 0.1]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.05]))
    QN: np.ndarray | None = None  # defaults to 10 Q
    v_max: float = 0.5
    w_max: float = 0.5
    mode: str = "sdf"
    slack_weight: float = 1e4
    max_iter: int = 20
    tol: float = 1e-6
    gamma_cbf: float = 0.2
    inflation: float = DEFAULT_INFLATION
    window_size: float = WINDOW_SIZE
    past_offset: float = 0.4
    sdf_size: int = 32
    damping: float = 1e-6
    margin: float = 0.01  # back-off on obstacle rows so plans riding the boundary do not touch

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown MPC mode {self.mode!r}; choose from {MODES}")
        if self.N < 1 or not self.dt > 0:
            raise ConfigError("horizon N and dt must be positive")
        self.Q = _psd(self.Q, "Q")
        self.R = _psd(self.R, "R", strict=True)
        self.QN = 10.0 * self.Q if self.QN is None else _psd(self.QN, "QN")
        if not 0 < self.gamma_cbf <= 1:
            raise ConfigError("gamma_cbf must lie in (0, 1]")

    @property
    def u_max(self) -> np.ndarray:
        return np.array([self.v_max, self.w_max])


# ---------------------------------------------------------------- dynamics

def unicycle(x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return np.stack([u[..., 0] * np.cos(x[..., 2]), u[..., 0] * np.sin(x[..., 2]), u[..., 1]], axis=-1)


def rk4(x, u, dt):
    k1 = unicycle(x, u)
    k2 = unicycle(x + 0.5 * dt * k1, u)
    k3 = unicycle(x + 0.5 * dt * k2, u)
    k4 = unicycle(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def step_dynamics(x, u, dt: float) -> np.ndarray:
    """RK4 step of the kinematic unicycle; heading wrapped to (-pi, pi]."""
    out = rk4(np.asarray(x, dtype=float), u, dt)
    out[..., 2] = wrap_angle(out[..., 2])
    return out


def _fjac(x, u):
    """Jacobians of the continuous dynamics for batched states (N, 3)."""
    n = x.shape[0]
    c, s, v = np.cos(x[:, 2]), np.sin(x[:, 2]), u[:, 0]
    A = np.zeros((n, 3, 3))
    A[:, 0, 2] = -v * s
    A[:, 1, 2] = v * c
    B = np.zeros((n, 3, 2))
    B[:, 0, 0] = c
    B[:, 1, 0] = s
    B[:, 2, 1] = 1.0
    return A, B


def rk4_jac(x, u, dt):
    """Batched RK4 step and its Jacobians: (x_next (N,3), A (N,3,3), B (N,3,2))."""
    I = np.eye(3)
    k1 = unicycle(x, u)
    A1, B1 = _fjac(x, u)
    x2 = x + 0.5 * dt * k1
    k2 = unicycle(x2, u)
    A2, B2 = _fjac(x2, u)
    dk2x = A2 @ (I + 0.5 * dt * A1)
    dk2u = A2 @ (0.5 * dt * B1) + B2
    x3 = x + 0.5 * dt * k2
    k3 = unicycle(x3, u)
    A3, B3 = _fjac(x3, u)
    dk3x = A3 @ (I + 0.5 * dt * dk2x)
    dk3u = A3 @ (0.5 * dt * dk2u) + B3
    x4 = x + dt * k3
    k4 = unicycle(x4, u)
    A4, B4 = _fjac(x4, u)
    dk4x = A4 @ (I + dt * dk3x)
    dk4u = A4 @ (dt * dk3u) + B4
    xn = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    A = I + dt / 6.0 * (A1 + 2 * dk2x + 2 * dk3x + dk4x)
    B = dt / 6.0 * (B1 + 2 * dk2u + 2 * dk3u + dk4u)
    return xn, A, B


def rollout(x0, U, dt) -> np.ndarray:
    X = np.empty((len(U) + 1, 3))
    X[0] = x0
    for i, u in enumerate(U):
        X[i + 1] = rk4(X[i], u, dt)
    return X


# ---------------------------------------------------------------- problem

TerminalFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class MpcProblem:
    x0: np.ndarray
    x_ref: np.ndarray            # (N + 1, 3)
    centers: np.ndarray          # (N + 1, M, 2): obstacle centers at every stage
    radii: np.ndarray            # (M,)
    config: MpcConfig
    residual: TerminalFn | None = None  # x -> (R(x), dR/dx), rntc only

    @property
    def N(self) -> int:
        return self.config.N

    @property
    def mode(self) -> str:
        return self.config.mode

    def distances(self, X):
        """Per-obstacle signed distances (N+1, M) and gradients (N+1, M, 2)."""
        d = X[:, None, :2] - self.centers
        norm = np.sqrt((d ** 2).sum(-1))
        safe = np.maximum(norm, 1e-12)
        return norm - self.radii - self.config.inflation, d / safe[..., None]

    def constraints(self, X):
        """Constraint values h (m,) and Jacobian w.r.t. X[1:] flattened (m, 3N); h >= 0 wanted."""
        N, mode = self.N, self.mode
        M = len(self.radii)
        if mode == "none":
            return np.zeros(0), np.zeros((0, 3 * N))
        dist, grad = self.distances(X)
        dist = dist - self.config.margin
        rows, jac = [], []
        if mode == "dcbf":
            g = 1.0 - self.config.gamma_cbf
            for i in range(N):
                for j in range(M):
                    rows.append(dist[i + 1, j] - g * dist[i, j])
                    r = np.zeros(3 * N)
                    r[3 * i:3 * i + 2] = grad[i + 1, j]
                    if i > 0:
                        r[3 * (i - 1):3 * (i - 1) + 2] -= g * grad[i, j]
                    jac.append(r)
            return np.array(rows).reshape(-1), np.array(jac).reshape(-1, 3 * N)
        last = N if mode == "sdf" else N - 1
        for i in range(1, last + 1):
            for j in range(M):
                rows.append(dist[i, j])
                r = np.zeros(3 * N)
                r[3 * (i - 1):3 * (i - 1) + 2] = grad[i, j]
                jac.append(r)
        if mode == "rntc":
            if self.residual is None:
                raise ConfigError("rntc mode needs main-network parameters")
            R, dR = self.residual(X[N])
            base = slice(3 * (N - 1), 3 * N)
            for j in range(M):
                rows.append(dist[N, j] - R)
                r = np.zeros(3 * N)
                r[base] = -dR
                r[3 * (N - 1):3 * (N - 1) + 2] += grad[N, j]
                jac.append(r)
            rows.append(F_MAX - R)
            r = np.zeros(3 * N)
            r[base] = -dR
            jac.append(r)
        return np.array(rows, dtype=float).reshape(-1), np.array(jac).reshape(-1, 3 * N)

    def terminal_value(self, x) -> float:
        """The terminal constraint function at x_N, e.g. F_N(p) - R(x) for rntc."""
        X = np.zeros((self.N + 1, 3))
        X[self.N] = x
        dist, _ = self.distances(X)
        F = min(F_MAX, float(dist[self.N].min())) if dist.shape[1] else F_MAX
        if self.mode == "rntc":
            return F - self.residual(np.asarray(x, dtype=float))[0]
        return F

    def cost(self, X, U) -> float:
        c = self.config
        e = X - self.x_ref
        J = np.einsum("ni,ij,nj->", e[1:-1], c.Q, e[1:-1]) + e[-1] @ c.QN @ e[-1]
        return float(J + np.einsum("ni,ij,nj->", U, c.R, U))

    def defects(self, X, U) -> np.ndarray:
        return rk4(X[:-1], U, self.config.dt) - X[1:]


def build_problem(x0, x_ref, snapshot: EnvironmentSnapshot, config: MpcConfig,
                  residual: TerminalFn | None = None) -> MpcProblem:
    """Predict obstacles over the horizon and assemble the NLP data."""
    if config.mode == "rntc" and residual is None:
        raise ConfigError("rntc mode needs main-network parameters")
    centers, radii, vel = snapshot.arrays()
    t = np.arange(config.N + 1) * config.dt
    stage_centers = centers[None] + t[:, None, None] * vel[None]
    return MpcProblem(np.asarray(x0, dtype=float), np.asarray(x_ref, dtype=float),
                      stage_centers, radii, config, residual)


@dataclass
class MpcSolution:
    states: np.ndarray
    controls: np.ndarray
    status: str
    solve_time: float
    iterations: int
    cost: float
    slack: float          # max constraint violation of the returned plan
    defect: float
    trace: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------- SQP

def _merit(problem: MpcProblem, X, U, mu):
    h, _ = problem.constraints(X)
    viol = np.maximum(0.0, -h).sum()
    return problem.cost(X, U) + mu * (np.abs(problem.defects(X, U)).sum() + viol)


def _qp_step(problem: MpcProblem, X, U, h, Jh):
    c = problem.config
    N = c.N
    nx, nu, m = 3 * N, 2 * N, len(h)
    n = nx + nu + m
    mu = c.slack_weight
    G = np.zeros((n, n))
    a = np.zeros(n)
    e = X - problem.x_ref
    for i in range(1, N + 1):
        W = c.QN if i == N else c.Q
        s = slice(3 * (i - 1), 3 * i)
        G[s, s] = 2 * W
        a[s] = -2 * W @ e[i]
    for i in range(N):
        s = slice(nx + 2 * i, nx + 2 * i + 2)
        G[s, s] = 2 * c.R
        a[s] = -2 * c.R @ U[i]
    a[nx + nu:] = -mu
    G[np.diag_indices(n)] += c.damping
    G[np.arange(nx + nu, n), np.arange(nx + nu, n)] += 1e-6

    xn, A, B = rk4_jac(X[:-1], U, c.dt)
    d = xn - X[1:]
    # equalities: dx_{i+1} - A_i dx_i - B_i du_i = d_i
    Ceq = np.zeros((n, nx))
    beq = d.reshape(-1)
    for i in range(N):
        cols = slice(3 * i, 3 * i + 3)
        Ceq[3 * i:3 * i + 3, cols] = np.eye(3)
        if i > 0:
            Ceq[3 * (i - 1):3 * i, cols] = -A[i].T
        Ceq[nx + 2 * i:nx + 2 * i + 2, cols] = -B[i].T
    # control bounds
    Cu = np.zeros((n, 2 * nu))
    Cu[nx:nx + nu, :nu] = np.eye(nu)
    Cu[nx:nx + nu, nu:] = -np.eye(nu)
    umax = np.tile(c.u_max, N)
    bu = np.concatenate([-umax - U.reshape(-1), -(umax - U.reshape(-1))])
    # h + Jh dX + s >= 0 and s >= 0
    Ch = np.zeros((n, 2 * m))
    Ch[:nx, :m] = Jh.T
    Ch[nx + nu:, :m] = np.eye(m)
    Ch[nx + nu:, m:] = np.eye(m)
    bh = np.concatenate([-h, np.zeros(m)])
    C = np.hstack([Ceq, Cu, Ch])
    b = np.concatenate([beq, bu, bh])
    z = quadprog.solve_qp(G, a, C, b, nx)[0]
    dX = np.vstack([np.zeros(3), z[:nx].reshape(N, 3)])
    dU = z[nx:nx + nu].reshape(N, 2)
    slack = z[nx + nu:]
    lin_cost = problem.cost(X + dX, U + dU)
    return dX, dU, lin_cost + mu * slack.sum()


def solve(problem: MpcProblem, warm_start: tuple[np.ndarray, np.ndarray] | None = None) -> MpcSolution:
    """SQP from ``warm_start`` = (X (N+1, 3), U (N, 2)), or from zero controls."""
    t0 = time.perf_counter()
    c = problem.config
    N, mu = c.N, c.slack_weight
    if warm_start is None:
        U = np.zeros((N, 2))
        X = rollout(problem.x0, U, c.dt)
    else:
        X = np.array(warm_start[0], dtype=float)
        U = np.clip(np.array(warm_start[1], dtype=float), -c.u_max, c.u_max)
    X[0] = problem.x0
    status = "max-iter"
    trace = []
    it = 0
    for it in range(1, c.max_iter + 1):
        h, Jh = problem.constraints(X)
        phi0 = problem.cost(X, U) + mu * (np.abs(problem.defects(X, U)).sum()
                                          + np.maximum(0.0, -h).sum())
        try:
            dX, dU, model = _qp_step(problem, X, U, h, Jh)
        except ValueError:
            break
        pred = phi0 - model
        step = max(np.abs(dX).max(), np.abs(dU).max())
        alpha = 1.0
        while True:
            Un = np.clip(U + alpha * dU, -c.u_max, c.u_max)
            target = phi0 - 1e-4 * alpha * max(pred, 0.0)
            Xn = X + alpha * dX
            phi = _merit(problem, Xn, Un, mu)
            if phi > target:
                # second-order correction: the heavily penalized defects are only
                # linearized in the QP, so also try the states re-simulated from Un
                Xs = rollout(problem.x0, Un, c.dt)
                phi_s = _merit(problem, Xs, Un, mu)
                if phi_s < phi:
                    Xn, phi = Xs, phi_s
            if phi <= target or alpha < 1e-3:
                break
            alpha *= 0.5
        X, U = Xn, Un
        trace.append({"iter": it, "merit": phi, "step": step, "alpha": alpha})
        if step * alpha < c.tol or (alpha == 1.0 and pred < c.tol * (1 + abs(phi0))
                                     and step < 1e3 * c.tol):
            status = "optimal"
            break
    # final plan is the exact rollout of the controls: zero dynamics defect
    defect = float(np.abs(problem.defects(X, U)).max())
    X = rollout(problem.x0, U, c.dt)
    h, _ = problem.constraints(X)
    viol = float(np.maximum(0.0, -h).max()) if len(h) else 0.0
    if status == "optimal" and viol > 1e-6:
        status = "infeasible-relaxed"
    return MpcSolution(X, U, status, time.perf_counter() - t0, it, problem.cost(X, U), viol,
                       defect, trace)


# ---------------------------------------------------------------- planner

@dataclass(frozen=True)
class ReferencePath:
    """Straight line start -> goal sampled at ``spacing``."""

    start: tuple[float, float]
    goal: tuple[float, float]
    spacing: float = 0.05

    @property
    def heading(self) -> float:
        return math.atan2(self.goal[1] - self.start[1], self.goal[0] - self.start[0])

    @property
    def points(self) -> np.ndarray:
        s, g = np.asarray(self.start, float), np.asarray(self.goal, float)
        L = float(np.linalg.norm(g - s))
        n = max(1, int(math.ceil(L / self.spacing)))
        return s + np.linspace(0.0, 1.0, n + 1)[:, None] * (g - s)

    def lateral_deviation(self, p) -> float:
        s, g = np.asarray(self.start, float), np.asarray(self.goal, float)
        d = g - s
        t = np.clip(np.dot(np.asarray(p, float)[:2] - s, d) / np.dot(d, d), 0.0, 1.0)
        return float(np.linalg.norm(np.asarray(p, float)[:2] - (s + t * d)))

    def references(self, x, N: int) -> np.ndarray:
        pts = self.points
        i0 = int(np.argmin(((pts - np.asarray(x[:2])) ** 2).sum(-1)))
        idx = np.minimum(i0 + np.arange(N + 1), len(pts) - 1)
        th = x[2] + wrap_angle(self.heading - x[2])
        return np.column_stack([pts[idx], np.full(N + 1, th)])


@dataclass
class PlanResult:
    control: np.ndarray
    solution: MpcSolution
    theta: np.ndarray | None
    wall_time: float


class Planner:
    """Stateful receding-horizon planner (keeps the shifted warm start)."""

    def __init__(self, config: MpcConfig, hypernet: HyperNet | None = None,
                 main_spec: MainNetSpec | None = None):
        if config.mode == "rntc" and (hypernet is None or main_spec is None):
            raise ConfigError("rntc mode needs a trained hypernetwork")
        if hypernet is not None and hypernet.spec.in_size != config.sdf_size:
            config.sdf_size = hypernet.spec.in_size
        self.config = config
        self.hypernet = hypernet
        self.main_spec = main_spec
        self._last: MpcSolution | None = None

    def reset(self):
        self._last = None

    def sense(self, state, obstacles: Sequence[Obstacle], t: float = 0.0) -> EnvironmentSnapshot:
        """Obstacles whose centers lie inside the square window around the robot."""
        c = self.config
        snap = EnvironmentSnapshot((), (float(state[0]), float(state[1])), c.window_size, t)
        return EnvironmentSnapshot(tuple(o for o in obstacles if snap.in_window(o.center)),
                                   snap.window_center, c.window_size, t)

    def sdf_pair(self, snapshot: EnvironmentSnapshot) -> np.ndarray:
        """SDFs at the end of the horizon and ``past_offset`` before it, over the current window."""
        c = self.config
        spec = GridSpec.for_window(snapshot.window_center, c.window_size, c.sdf_size)
        tN = c.N * c.dt
        now = rasterize(shift(snapshot, tN), spec, c.inflation).values
        past = rasterize(shift(snapshot, tN - c.past_offset), spec, c.inflation).values
        return np.stack([now, past])

    def residual_fn(self, snapshot: EnvironmentSnapshot) -> tuple[TerminalFn, np.ndarray]:
        theta = hyper_forward(self.hypernet, self.sdf_pair(snapshot))
        norm = StateNormalizer(snapshot.window_center, self.config.window_size)
        spec = self.main_spec

        def residual(x):
            return main_value_and_grad(theta, x, spec, norm)

        return residual, theta

    def warm_start(self, x0):
        if self._last is None:
            return None
        X, U = self._last.states, self._last.controls
        Xw = np.vstack([X[1:], X[-1:]])
        Uw = np.vstack([U[1:], U[-1:]])
        Xw[0] = x0
        # keep the heading branch of the measured state
        Xw[:, 2] += np.round((x0[2] - X[1, 2]) / (2 * math.pi)) * 2 * math.pi
        return Xw, Uw

    def plan_step(self, state, obstacles: Sequence[Obstacle], reference: ReferencePath,
                  t: float = 0.0) -> PlanResult:
        t0 = time.perf_counter()
        x0 = np.asarray(state, dtype=float)
        snap = self.sense(x0, obstacles, t)
        residual, theta = (None, None)
        if self.config.mode == "rntc":
            residual, theta = self.residual_fn(snap)
        problem = build_problem(x0, reference.references(x0, self.config.N), snap, self.config,
                                residual)
        sol = solve(problem, self.warm_start(x0))
        self._last = sol
        return PlanResult(sol.controls[0].copy(), sol, theta, time.perf_counter() - t0)

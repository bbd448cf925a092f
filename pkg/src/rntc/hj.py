"""Grid solver for the time-varying reachability variational inequality.

The value function is integrated backward in time with a first-order
Lax-Friedrichs scheme and clamped from above by the failure function after
every step:

    V(t - dt) = min(F(t - dt), V(t) + dt * H_LF(V(t)))

State is (x, y, theta) for a unicycle with symmetric control box
|v| <= v_max, |omega| <= w_max.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from rntc.errors import ConfigError
from rntc.geometry import (DEFAULT_INFLATION, WINDOW_SIZE, EnvironmentSnapshot, GridSpec,
                           sdf_points, shift)

V_MAX = 0.5
W_MAX = 0.5


@dataclass(frozen=True)
class StateGrid:
    nx: int = 100
    ny: int = 100
    ntheta: int = 30
    center: tuple[float, float] = (0.0, 0.0)
    size: float = WINDOW_SIZE

    def __post_init__(self):
        if min(self.nx, self.ny, self.ntheta) < 2 or not self.size > 0:
            raise ConfigError(f"invalid state grid {self.nx}x{self.ny}x{self.ntheta}, size {self.size}")

    @classmethod
    def canonical(cls, center=(0.0, 0.0)) -> "StateGrid":
        return cls(100, 100, 30, tuple(center))

    @classmethod
    def desk(cls, center=(0.0, 0.0)) -> "StateGrid":
        return cls(50, 50, 15, tuple(center))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.ntheta)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.size / self.nx, self.size / self.ny, 2 * math.pi / self.ntheta)

    @property
    def lower(self) -> tuple[float, float]:
        return (self.center[0] - self.size / 2, self.center[1] - self.size / 2)

    def xy_spec(self) -> GridSpec:
        if self.nx != self.ny:
            return GridSpec(self.nx, self.ny, self.lower, self.size / self.nx)
        return GridSpec.for_window(self.center, self.size, self.nx)

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dx, dy, dth = self.spacing
        x0, y0 = self.lower
        return (x0 + (np.arange(self.nx) + 0.5) * dx,
                y0 + (np.arange(self.ny) + 0.5) * dy,
                np.arange(self.ntheta) * dth)

    def states(self) -> np.ndarray:
        """All grid nodes as an (nx, ny, ntheta, 3) array."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)


@dataclass
class ValueGrid:
    values: np.ndarray = field(repr=False)
    grid: StateGrid
    time_label: float = 0.0


@dataclass
class BrtResult:
    value: ValueGrid
    converged: bool
    change: float  # band-limited max-norm change of V(., 0) under horizon extension
    steps: int


def hamiltonian(theta, grad, v_max: float = V_MAX, w_max: float = W_MAX):
    """max over the control box of grad . f(x, u), in closed form."""
    grad = np.asarray(grad, dtype=float)
    g1, g2, g3 = grad[..., 0], grad[..., 1], grad[..., 2]
    return v_max * np.abs(g1 * np.cos(theta) + g2 * np.sin(theta)) + w_max * np.abs(g3)


def dissipation(grid: StateGrid, v_max: float = V_MAX, w_max: float = W_MAX) -> tuple[float, float, float]:
    return (v_max, v_max, w_max)


def cfl_limit(grid: StateGrid, v_max: float = V_MAX, w_max: float = W_MAX) -> float:
    alpha = dissipation(grid, v_max, w_max)
    return 1.0 / sum(a / d for a, d in zip(alpha, grid.spacing))


def _one_sided(V: np.ndarray, axis: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    d = np.diff(V, axis=axis) / h
    first = np.take(d, [0], axis=axis)
    last = np.take(d, [-1], axis=axis)
    minus = np.concatenate([first, d], axis=axis)
    plus = np.concatenate([d, last], axis=axis)
    return minus, plus


def lax_friedrichs_rate(V: np.ndarray, grid: StateGrid, v_max: float = V_MAX,
                        w_max: float = W_MAX) -> np.ndarray:
    """dV/d(backward time) at every node; V may carry leading batch axes."""
    dx, dy, dth = grid.spacing
    ax, ay, ath = dissipation(grid, v_max, w_max)
    xm, xp = _one_sided(V, -3, dx)
    ym, yp = _one_sided(V, -2, dy)
    thm = (V - np.roll(V, 1, axis=-1)) / dth
    thp = (np.roll(V, -1, axis=-1) - V) / dth
    theta = grid.axes()[2]
    px = 0.5 * (xm + xp)
    py = 0.5 * (ym + yp)
    pth = 0.5 * (thm + thp)
    H = v_max * np.abs(px * np.cos(theta) + py * np.sin(theta)) + w_max * np.abs(pth)
    # backward-time sign convention: dissipation enters with + (p+ - p-)
    return H + 0.5 * (ax * (xp - xm) + ay * (yp - ym) + ath * (thp - thm))


def backward_step(V_next: ValueGrid, F_now: np.ndarray, dt_pde: float,
                  v_max: float = V_MAX, w_max: float = W_MAX) -> ValueGrid:
    """One explicit step from t to t - dt_pde followed by the failure clamp."""
    grid = V_next.grid
    limit = cfl_limit(grid, v_max, w_max)
    if not 0 < dt_pde <= limit * (1 + 1e-12):
        raise ConfigError(f"dt_pde={dt_pde:.4g} violates CFL limit {limit:.4g}")
    F = np.asarray(F_now, dtype=float)
    if F.ndim == 2:
        F = F[..., None]
    V = V_next.values
    out = np.minimum(F, V + dt_pde * lax_friedrichs_rate(V, grid, v_max, w_max))
    return ValueGrid(out, grid, V_next.time_label - dt_pde)


def failure_from_snapshot(snapshot: EnvironmentSnapshot, grid: StateGrid,
                          inflation: float = DEFAULT_INFLATION) -> Callable[[float], np.ndarray]:
    """t -> F on the grid's x-y plane, obstacles extrapolated at constant velocity."""
    pts = grid.xy_spec().points()

    def failure(t: float) -> np.ndarray:
        return sdf_points(shift(snapshot, t - snapshot.timestamp), pts, inflation)

    return failure


def solve_brt(failure_fn: Callable[[float], np.ndarray], grid: StateGrid, horizon: float = 4.0,
              tol: float = 1e-3, *, band: float = 1.0, check_interval: float = 0.1,
              cfl_fraction: float = 0.5, v_max: float = V_MAX, w_max: float = W_MAX) -> BrtResult:
    """Integrate from t = horizon back to t = 0 and return V(., 0).

    ``failure_fn(t)`` gives F on the x-y plane at absolute time t. Convergence
    is judged by re-running the sweep from ``horizon - check_interval`` in
    lockstep: if V(., 0) restricted to [-band, band] moves by less than ``tol``
    when the horizon grows by ``check_interval``, the result is converged.
    """
    if not horizon > 0:
        raise ConfigError("horizon must be positive")
    if not 0 < cfl_fraction <= 1:
        raise ConfigError("cfl_fraction must lie in (0, 1]")
    limit = cfl_limit(grid, v_max, w_max)
    n = max(1, math.ceil(horizon / (cfl_fraction * limit)))
    dt = horizon / n
    offset = max(1, int(round(check_interval / dt)))
    check = offset < n

    F = np.asarray(failure_fn(horizon), dtype=float)[..., None]
    V = np.broadcast_to(F, grid.shape).copy()
    for k in range(1, n + 1):
        t = horizon - k * dt if k < n else 0.0
        F = np.asarray(failure_fn(t), dtype=float)[..., None]
        V = np.minimum(F, V + dt * lax_friedrichs_rate(V, grid, v_max, w_max))
        if check and k == offset:
            V = np.stack([V, np.broadcast_to(F, grid.shape)])

    if check:
        full, shorter = V[0], V[1]
        change = float(np.max(np.abs(np.clip(full, -band, band) - np.clip(shorter, -band, band))))
        V = full
    else:
        change = float("inf")
    return BrtResult(ValueGrid(V, grid, 0.0), bool(change < tol), change, n)


def interpolate(V: ValueGrid, state) -> tuple[np.ndarray | float, np.ndarray | bool]:
    """Trilinear interpolation, periodic in theta, clamped in x-y.

    Returns (value, in_bounds). Works on a single state or an (..., 3) batch.
    """
    s = np.asarray(state, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    grid = V.grid
    dx, dy, dth = grid.spacing
    x0, y0 = grid.lower
    fx = (s[:, 0] - x0) / dx - 0.5
    fy = (s[:, 1] - y0) / dy - 0.5
    inside = (fx >= 0) & (fx <= grid.nx - 1) & (fy >= 0) & (fy <= grid.ny - 1)
    fx = np.clip(fx, 0, grid.nx - 1)
    fy = np.clip(fy, 0, grid.ny - 1)
    ft = np.mod(s[:, 2], 2 * math.pi) / dth
    ix = np.minimum(np.floor(fx).astype(int), grid.nx - 2)
    iy = np.minimum(np.floor(fy).astype(int), grid.ny - 2)
    it = np.floor(ft).astype(int) % grid.ntheta
    wx, wy, wt = fx - ix, fy - iy, ft - np.floor(ft)
    it1 = (it + 1) % grid.ntheta
    vals = V.values
    out = np.zeros(len(s))
    for ox, wxs in ((0, 1 - wx), (1, wx)):
        for oy, wys in ((0, 1 - wy), (1, wy)):
            out += wxs * wys * ((1 - wt) * vals[ix + ox, iy + oy, it] + wt * vals[ix + ox, iy + oy, it1])
    if single:
        return float(out[0]), bool(inside[0])
    return out, inside

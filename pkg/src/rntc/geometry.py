"""Disk-obstacle world model, analytic signed distance and SDF rasterization.

Positions are in meters, velocities in m/s. The robot is a point checked
against obstacle disks inflated by the robot radius.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from rntc.errors import ConfigError

F_MAX = 10.0
DEFAULT_INFLATION = 0.3
WINDOW_SIZE = 8.0


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


@dataclass(frozen=True)
class EnvironmentSnapshot:
    obstacles: tuple[Obstacle, ...] = ()
    window_center: tuple[float, float] = (0.0, 0.0)
    window_size: float = WINDOW_SIZE
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        c = self.window_center
        object.__setattr__(self, "window_center", (float(c[0]), float(c[1])))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (centers (M, 2), radii (M,), velocities (M, 2))."""
        m = len(self.obstacles)
        centers = np.array([o.center for o in self.obstacles], dtype=float).reshape(m, 2)
        radii = np.array([o.radius for o in self.obstacles], dtype=float).reshape(m)
        vel = np.array([o.velocity for o in self.obstacles], dtype=float).reshape(m, 2)
        return centers, radii, vel

    def in_window(self, point) -> bool:
        half = self.window_size / 2
        return (abs(point[0] - self.window_center[0]) <= half
                and abs(point[1] - self.window_center[1]) <= half)


@dataclass(frozen=True)
class GridSpec:
    """Square raster over a window; samples at cell centers, origin at the lower-left corner."""

    nx: int
    ny: int
    origin: tuple[float, float]
    spacing: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or not self.spacing > 0:
            raise ConfigError(f"invalid grid spec: nx={self.nx} ny={self.ny} spacing={self.spacing}")

    @classmethod
    def for_window(cls, center=(0.0, 0.0), size: float = WINDOW_SIZE, n: int = 100) -> "GridSpec":
        if n < 1 or not size > 0:
            raise ConfigError(f"invalid grid spec: n={n} size={size}")
        return cls(n, n, (center[0] - size / 2, center[1] - size / 2), size / n)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.spacing
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.spacing
        return xs, ys

    def points(self) -> np.ndarray:
        xs, ys = self.axes()
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X, Y], axis=-1)


@dataclass(frozen=True)
class SdfGrid:
    values: np.ndarray = field(repr=False)
    origin: tuple[float, float]
    spacing: float
    timestamp: float


def sdf_points(snapshot: EnvironmentSnapshot, points, inflation: float = DEFAULT_INFLATION) -> np.ndarray:
    """Vectorized signed distance at points of shape (..., 2)."""
    pts = np.asarray(points, dtype=float)
    centers, radii, _ = snapshot.arrays()
    if len(radii) == 0:
        return np.full(pts.shape[:-1], F_MAX)
    d = pts[..., None, :] - centers
    dist = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2) - radii - inflation
    return np.clip(dist.min(axis=-1), -F_MAX, F_MAX)


def sdf_eval(snapshot: EnvironmentSnapshot, point, inflation: float = DEFAULT_INFLATION) -> float:
    """Clamped distance from ``point`` to the nearest inflated obstacle disk."""
    if inflation < 0:
        raise ValueError("inflation must be non-negative")
    return float(sdf_points(snapshot, np.asarray(point, dtype=float)[None], inflation)[0])


def shift(snapshot: EnvironmentSnapshot, dt: float) -> EnvironmentSnapshot:
    """Constant-velocity extrapolation by ``dt`` seconds (negative looks into the past)."""
    if dt == 0:
        return snapshot
    moved = tuple(
        replace(o, center=(o.center[0] + o.velocity[0] * dt, o.center[1] + o.velocity[1] * dt))
        for o in snapshot.obstacles
    )
    return replace(snapshot, obstacles=moved, timestamp=snapshot.timestamp + dt)


def predict(snapshot: EnvironmentSnapshot, dt: float) -> EnvironmentSnapshot:
    if dt < 0:
        raise ValueError("prediction step must be non-negative")
    return shift(snapshot, dt)


def rasterize(snapshot: EnvironmentSnapshot, spec: GridSpec, inflation: float = DEFAULT_INFLATION) -> SdfGrid:
    values = sdf_points(snapshot, spec.points(), inflation)
    return SdfGrid(values, spec.origin, spec.spacing, snapshot.timestamp)


def sdf_sequence(snapshot: EnvironmentSnapshot, steps: int, dt: float, spec: GridSpec,
                 inflation: float = DEFAULT_INFLATION) -> list[SdfGrid]:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return [rasterize(predict(snapshot, i * dt), spec, inflation) for i in range(steps)]


def window_spec(snapshot: EnvironmentSnapshot, n: int) -> GridSpec:
    return GridSpec.for_window(snapshot.window_center, snapshot.window_size, n)


def make_snapshot(obstacles: Sequence[Obstacle], center=(0.0, 0.0), size: float = WINDOW_SIZE,
                  timestamp: float = 0.0) -> EnvironmentSnapshot:
    return EnvironmentSnapshot(tuple(obstacles), center, size, timestamp)

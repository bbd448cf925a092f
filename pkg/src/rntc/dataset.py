"""Scenario synthesis, HJ ground-truth labeling, and the binary dataset format.

File layout (little-endian; every float is 32-bit):

    header  magic "RNTCDATA", version u32, scale char[8],
            nx, ny, ntheta, sdf_size, K u32, dt, past_offset, window, inflation f32,
            count u32, config_hash char[16]
    pair    scenario_id u64, seed u64, n_obs u32, n_obs x (cx, cy, r, vx, vy) f32,
            converged u8, sdf_pair f32[2*S*S], failure f32[nx*ny], value f32[nx*ny*ntheta]
"""
from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from rntc.errors import CorruptFileError, DatasetError
from rntc.geometry import (DEFAULT_INFLATION, WINDOW_SIZE, EnvironmentSnapshot, GridSpec, Obstacle,
                           rasterize, shift)
from rntc.hj import failure_from_snapshot, solve_brt
from rntc.scales import get_scale

log = logging.getLogger(__name__)

MAGIC = b"RNTCDATA"
VERSION = 1
_HEADER = struct.Struct("<8sI8s5I4fI16s")
_PAIR_HEAD = struct.Struct("<QQI")


@dataclass(frozen=True)
class DataConfig:
    scale: str = "paper"
    seed: int = 0
    max_obstacles: int = 4
    include_empty: bool = True
    max_speed: float = 1.0
    obstacle_radius: float = 0.3
    inflation: float = DEFAULT_INFLATION
    window_size: float = WINDOW_SIZE
    dt: float = 0.1
    past_offset: float = 0.4
    horizon: float = 8.0
    tol: float = 1e-3
    band: float = 0.5

    def geometry(self) -> "DatasetGeometry":
        s = get_scale(self.scale)
        return DatasetGeometry(self.scale, s.grid.nx, s.grid.ny, s.grid.ntheta, s.sdf_size, 2,
                               self.dt, self.past_offset, self.window_size, self.inflation)

    def hash(self) -> bytes:
        return hashlib.blake2b(repr(sorted(asdict(self).items())).encode(), digest_size=16).digest()


@dataclass(frozen=True)
class DatasetGeometry:
    scale: str
    nx: int
    ny: int
    ntheta: int
    sdf_size: int
    K: int
    dt: float
    past_offset: float
    window_size: float
    inflation: float

    def _f32(self):
        # compare after the float32 round trip the file imposes
        return (self.scale, self.nx, self.ny, self.ntheta, self.sdf_size, self.K,
                *np.float32([self.dt, self.past_offset, self.window_size, self.inflation]).tolist())

    def matches(self, other: "DatasetGeometry") -> bool:
        return self._f32() == other._f32()


@dataclass(frozen=True)
class TrajectorySample:
    """Obstacle states at the split time k; past and future follow by constant velocity."""

    scenario_id: int
    seed: int
    obstacles: tuple[Obstacle, ...]
    dt: float = 0.1
    past_steps: int = 4
    future_steps: int = 80

    def snapshot(self, window_size: float = WINDOW_SIZE) -> EnvironmentSnapshot:
        return EnvironmentSnapshot(self.obstacles, (0.0, 0.0), window_size, 0.0)

    def positions(self, step: int) -> np.ndarray:
        """Obstacle centers at step k + ``step`` (negative = past)."""
        snap = shift(self.snapshot(), step * self.dt)
        return snap.arrays()[0]


@dataclass
class TrainingPair:
    scenario_id: int
    seed: int
    obstacles: tuple[Obstacle, ...]
    sdf_pair: np.ndarray = field(repr=False)   # (2, S, S): now, past
    failure: np.ndarray = field(repr=False)    # (nx, ny)
    value: np.ndarray = field(repr=False)      # (nx, ny, ntheta)
    converged: bool = True

    def equals(self, other: "TrainingPair") -> bool:
        return (self.scenario_id == other.scenario_id and self.seed == other.seed
                and len(self.obstacles) == len(other.obstacles)
                and self.converged == other.converged
                and np.array_equal(self.sdf_pair, other.sdf_pair)
                and np.array_equal(self.failure, other.failure)
                and np.array_equal(self.value, other.value))


@dataclass
class Dataset:
    geometry: DatasetGeometry
    pairs: list[TrainingPair]
    config_hash: bytes = b"\0" * 16

    def __len__(self):
        return len(self.pairs)

    def split(self, val_every: int = 10) -> tuple[list[TrainingPair], list[TrainingPair]]:
        """Deterministic 90/10 split by scenario id."""
        val = [p for p in self.pairs if p.scenario_id % val_every == val_every - 1]
        train = [p for p in self.pairs if p.scenario_id % val_every != val_every - 1]
        return train, val


def scenario_seed(seed: int, scenario_id: int) -> int:
    return int(np.random.SeedSequence([seed, scenario_id]).generate_state(1)[0])


def sample_scenario(config: DataConfig, scenario_id: int) -> TrajectorySample:
    s = scenario_seed(config.seed, scenario_id)
    rng = np.random.default_rng(s)
    lo = 0 if config.include_empty else 1
    count = int(rng.integers(lo, config.max_obstacles + 1))
    half = config.window_size / 2
    obstacles = []
    for _ in range(count):
        center = rng.uniform(-half, half, 2)
        speed = rng.uniform(0.0, config.max_speed)
        heading = rng.uniform(0.0, 2 * math.pi)
        obstacles.append(Obstacle(tuple(center), config.obstacle_radius,
                                  (speed * math.cos(heading), speed * math.sin(heading))))
    return TrajectorySample(scenario_id, s, tuple(obstacles), config.dt,
                            int(round(config.past_offset / config.dt)),
                            int(round(config.horizon / config.dt)))


def generate_scenarios(seed: int, count: int, config: DataConfig | None = None,
                       start_id: int = 0) -> list[TrajectorySample]:
    if count < 1:
        raise ValueError("count must be >= 1")
    config = DataConfig(seed=seed) if config is None else _replace(config, seed=seed)
    return [sample_scenario(config, i) for i in range(start_id, start_id + count)]


def _replace(config: DataConfig, **kw) -> DataConfig:
    d = asdict(config)
    d.update(kw)
    return DataConfig(**d)


def label(sample: TrajectorySample, config: DataConfig) -> TrainingPair:
    """HJ ground truth for one scenario; ``converged`` records the solver flag."""
    scale = get_scale(config.scale)
    snap = sample.snapshot(config.window_size)
    spec = GridSpec.for_window((0.0, 0.0), config.window_size, scale.sdf_size)
    now = rasterize(snap, spec, config.inflation).values
    past = rasterize(shift(snap, -sample.past_steps * sample.dt), spec, config.inflation).values
    grid = scale.grid
    failure_fn = failure_from_snapshot(snap, grid, config.inflation)
    res = solve_brt(failure_fn, grid, sample.future_steps * sample.dt, config.tol, band=config.band)
    failure = failure_fn(0.0).astype(np.float32)
    value = res.value.values.astype(np.float32)
    return TrainingPair(sample.scenario_id, sample.seed, sample.obstacles,
                        np.stack([now, past]).astype(np.float32), failure, value, res.converged)


def _label_job(args):
    sample, config = args
    return label(sample, config)


def generate_dataset(config: DataConfig, count: int, workers: int = 1,
                     progress: Callable[[int, int, int], None] | None = None
                     ) -> tuple[list[TrainingPair], int]:
    """Label ``count`` converged pairs, resampling dropped scenarios with fresh ids.

    Returns (pairs sorted by scenario id, number of dropped scenarios). The ids
    tried are independent of ``workers``, so the result is too.
    """
    pairs: list[TrainingPair] = []
    dropped = 0
    next_id = 0
    pool = Pool(workers) if workers > 1 else None
    try:
        while len(pairs) < count:
            need = count - len(pairs)
            jobs = [(sample_scenario(config, i), config) for i in range(next_id, next_id + need)]
            next_id += need
            results = pool.imap(_label_job, jobs) if pool else map(_label_job, jobs)
            for pair in results:
                if pair.converged:
                    pairs.append(pair)
                else:
                    dropped += 1
                    log.info("dropped scenario %d: HJ solve not converged", pair.scenario_id)
                if progress:
                    progress(len(pairs), count, dropped)
    finally:
        if pool:
            pool.close()
            pool.join()
    pairs.sort(key=lambda p: p.scenario_id)
    return pairs, dropped


class DatasetWriter:
    """Streaming appender; the pair count is patched into the header on close."""

    def __init__(self, path, geometry: DatasetGeometry, config_hash: bytes = b"\0" * 16):
        self.path = Path(path)
        self.geometry = geometry
        self.config_hash = config_hash
        self.count = 0
        try:
            self._fh = open(self.path, "wb")
        except OSError as e:
            raise DatasetError(f"cannot write {self.path}: {e}") from e
        self._fh.write(_pack_header(geometry, 0, config_hash))

    def append(self, pair: TrainingPair):
        g = self.geometry
        if pair.sdf_pair.shape != (2, g.sdf_size, g.sdf_size) or pair.failure.shape != (g.nx, g.ny) \
                or pair.value.shape != (g.nx, g.ny, g.ntheta):
            raise DatasetError(f"pair {pair.scenario_id} does not match the file geometry")
        failure = np.asarray(pair.failure, dtype="<f4")
        value = np.asarray(pair.value, dtype="<f4")
        if np.any(value > failure[..., None]):
            raise DatasetError(f"pair {pair.scenario_id}: value exceeds failure (solver bug)")
        fh = self._fh
        fh.write(_PAIR_HEAD.pack(pair.scenario_id, pair.seed, len(pair.obstacles)))
        obs = np.array([[*o.center, o.radius, *o.velocity] for o in pair.obstacles],
                       dtype="<f4").reshape(-1, 5)
        fh.write(obs.tobytes())
        fh.write(bytes([1 if pair.converged else 0]))
        fh.write(np.asarray(pair.sdf_pair, dtype="<f4").tobytes())
        fh.write(failure.tobytes())
        fh.write(value.tobytes())
        self.count += 1

    def close(self):
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(_pack_header(self.geometry, self.count, self.config_hash))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _pack_header(g: DatasetGeometry, count: int, config_hash: bytes) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, g.scale.encode().ljust(8, b"\0"), g.nx, g.ny, g.ntheta,
                        g.sdf_size, g.K, g.dt, g.past_offset, g.window_size, g.inflation, count,
                        config_hash)


def write_dataset(path, dataset: Dataset):
    with DatasetWriter(path, dataset.geometry, dataset.config_hash) as w:
        for p in dataset.pairs:
            w.append(p)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptFileError(f"truncated dataset file while reading {what} "
                               f"({len(buf)} of {n} bytes)")
    return buf


def read_header(fh) -> tuple[DatasetGeometry, int, bytes]:
    raw = fh.read(_HEADER.size)
    if len(raw) < 8 or raw[:8] != MAGIC:
        raise DatasetError("not a dataset file (bad magic)")
    if len(raw) != _HEADER.size:
        raise CorruptFileError("truncated dataset header")
    (_, version, scale, nx, ny, nth, sdf, K, dt, past, window, infl, count,
     chash) = _HEADER.unpack(raw)
    if version != VERSION:
        raise DatasetError(f"dataset version {version} unsupported (expected {VERSION})")
    geom = DatasetGeometry(scale.rstrip(b"\0").decode(), nx, ny, nth, sdf, K, dt, past, window, infl)
    return geom, count, chash


def iter_dataset(path, expected: DatasetGeometry | None = None) -> Iterator[TrainingPair]:
    """Stream pairs one at a time."""
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    with fh:
        geom, count, _ = read_header(fh)
        if expected is not None and not geom.matches(expected):
            raise DatasetError(f"dataset geometry {geom} does not match configuration {expected}")
        S, G2, G3 = 2 * geom.sdf_size ** 2, geom.nx * geom.ny, geom.nx * geom.ny * geom.ntheta
        for _ in range(count):
            sid, seed, n_obs = _PAIR_HEAD.unpack(_read_exact(fh, _PAIR_HEAD.size, "pair header"))
            if n_obs > 64:
                raise CorruptFileError(f"implausible obstacle count {n_obs}")
            obs = np.frombuffer(_read_exact(fh, 20 * n_obs, "obstacles"), "<f4").reshape(-1, 5)
            conv = _read_exact(fh, 1, "flag")[0] == 1
            sdf = np.frombuffer(_read_exact(fh, 4 * S, "sdf"), "<f4").reshape(2, geom.sdf_size, geom.sdf_size)
            fail = np.frombuffer(_read_exact(fh, 4 * G2, "failure"), "<f4").reshape(geom.nx, geom.ny)
            val = np.frombuffer(_read_exact(fh, 4 * G3, "value"), "<f4").reshape(geom.nx, geom.ny, geom.ntheta)
            obstacles = tuple(Obstacle((float(o[0]), float(o[1])), float(o[2]), (float(o[3]), float(o[4])))
                              for o in obs)
            yield TrainingPair(sid, seed, obstacles, sdf.copy(), fail.copy(), val.copy(), conv)
        if fh.read(1):
            raise CorruptFileError("trailing bytes after the last pair")


def read_dataset(path, expected: DatasetGeometry | None = None) -> Dataset:
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise DatasetError(f"cannot read dataset {path}: {e}") from e
    with fh:
        geom, _, chash = read_header(fh)
    return Dataset(geom, list(iter_dataset(path, expected)), chash)

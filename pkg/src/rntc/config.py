"""INI run configuration shared by every CLI command.

    [run]        scale, seed, workers
    [data]       DataConfig fields (except scale and seed)
    [train]      TrainConfig fields (except mode and scale)
    [mpc]        MpcConfig fields (except N and mode); matrices as comma-separated diagonals
    [benchmark]  scenario_seed, scenarios, modes, horizons

Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from rntc.dataset import DataConfig
from rntc.errors import ConfigError, DatasetError
from rntc.mpc import MpcConfig
from rntc.neural.train import TrainConfig, scaled_milestones
from rntc.scales import get_scale

_RUN_KEYS = {"scale": str, "seed": int, "workers": int}
_BENCH_DEFAULTS = {"scenario_seed": 0, "scenarios": 100, "modes": "sdf,dcbf,rntc",
                   "horizons": "5,10,15,20"}


def _fields(cls, exclude) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in exclude:
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        out[f.name] = default
    return out


_SECTIONS = {
    "data": _fields(DataConfig, {"scale", "seed"}),
    "train": _fields(TrainConfig, {"mode", "scale"}),
    "mpc": _fields(MpcConfig, {"N", "mode"}),
    "benchmark": dict(_BENCH_DEFAULTS),
}


def _coerce(section: str, key: str, raw: str):
    default = _SECTIONS[section][key]
    try:
        if isinstance(default, bool):
            return {"true": True, "1": True, "yes": True,
                    "false": False, "0": False, "no": False}[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if default is None:  # optional ints, matrices given as diagonals
            vals = [float(v) for v in raw.split(",") if v.strip()]
            if section == "train" and key == "points_per_sample":
                return int(vals[0]) if vals else None
            return vals[0] if len(vals) == 1 and key not in ("Q", "R", "QN") else vals
        return raw.strip()
    except (ValueError, KeyError, IndexError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


@dataclass
class RunConfig:
    scale: str = "desk"
    seed: int = 0
    workers: int = 0  # 0: one per CPU
    data: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    mpc: dict = field(default_factory=dict)
    benchmark: dict = field(default_factory=dict)

    def __post_init__(self):
        get_scale(self.scale)
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")

    @property
    def n_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from None
        kw: dict = {}
        for section in cp.sections():
            if section == "run":
                for k, v in cp[section].items():
                    if k not in _RUN_KEYS:
                        raise ConfigError(f"unknown key [run] {k}")
                    try:
                        kw[k] = _RUN_KEYS[k](v)
                    except ValueError:
                        raise ConfigError(f"[run] {k}: cannot parse {v!r}") from None
            elif section in _SECTIONS:
                vals = {}
                for k, v in cp[section].items():
                    if k not in _SECTIONS[section]:
                        raise ConfigError(f"unknown key [{section}] {k}")
                    vals[k] = _coerce(section, k, v)
                kw[section] = vals
            else:
                raise ConfigError(f"unknown section [{section}]")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise DatasetError(f"cannot read config {path}: {e}") from e
        return cls.from_text(text)

    def override(self, **kw) -> "RunConfig":
        """Return a copy with non-None flag values applied (flags beat the file)."""
        d = dataclasses.asdict(self)
        for k, v in kw.items():
            if v is None:
                continue
            section, _, key = k.rpartition(".")
            if section:
                d[section][key] = v
            else:
                d[key] = v
        return RunConfig(**d)

    # -- per-module configs

    def data_config(self) -> DataConfig:
        try:
            return DataConfig(scale=self.scale, seed=self.seed, **self.data)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def train_config(self, mode: str) -> TrainConfig:
        kw = dict(self.train)
        kw["seed"] = kw.get("seed", self.seed)
        if self.scale == "desk":
            epochs = kw.pop("epochs", 30)
            if "milestones" not in kw:
                kw["milestones"] = scaled_milestones(epochs)
            return TrainConfig.desk(epochs, mode=mode, **kw)
        return TrainConfig(mode=mode, scale=self.scale, **kw)

    def mpc_kwargs(self) -> dict:
        return dict(self.mpc)

    def bench(self, key: str):
        v = self.benchmark.get(key, _BENCH_DEFAULTS[key])
        if key in ("modes",):
            return [m.strip() for m in str(v).split(",") if m.strip()]
        if key == "horizons":
            return [int(h) for h in str(v).split(",") if h.strip()]
        return int(v)

    # -- provenance

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {"scale": self.scale, "seed": str(self.seed), "workers": str(self.workers)}
        for section in _SECTIONS:
            vals = getattr(self, section)
            if vals:
                cp[section] = {k: _fmt(v) for k, v in sorted(vals.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("workers")  # parallelism never changes outputs
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.blake2b(blob, digest_size=8).hexdigest()

    def echo(self, artifact) -> Path:
        """Write the effective configuration next to ``artifact``."""
        p = Path(str(artifact) + ".config.ini")
        p.write_text(f"# config_hash={self.hash()}\n" + self.to_text())
        return p


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)

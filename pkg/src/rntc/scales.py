"""Paper-scale and desk-scale presets.

Desk scale shrinks every grid and network so that data generation, training
and the closed-loop benchmark fit on a single CPU core.
"""
from __future__ import annotations

from dataclasses import dataclass

from rntc.errors import ConfigError
from rntc.hj import StateGrid
from rntc.neural.hypernet import HyperNetSpec
from rntc.neural.mainnet import MainNetSpec


@dataclass(frozen=True)
class Scale:
    name: str
    grid: StateGrid
    sdf_size: int

    def main_spec(self, mode: str = "rntc") -> MainNetSpec:
        if self.name == "paper":
            return MainNetSpec.canonical(mode)
        return MainNetSpec.desk(mode)

    def hyper_spec(self) -> HyperNetSpec:
        n = self.main_spec().n_params
        if self.name == "paper":
            return HyperNetSpec.canonical(n)
        return HyperNetSpec.desk(n)


PAPER = Scale("paper", StateGrid.canonical(), 100)
DESK = Scale("desk", StateGrid.desk(), 32)
SCALES = {s.name: s for s in (PAPER, DESK)}


def get_scale(name: str) -> Scale:
    try:
        return SCALES[name]
    except KeyError:
        raise ConfigError(f"unknown scale {name!r}; choose from {sorted(SCALES)}") from None

"""Versioned checkpoint container.

    magic "RNTCCKPT" | version u32 | descriptor length u32 | descriptor (UTF-8 JSON)
    | parameter count u64 | parameters f32 little-endian

The descriptor holds both network specs, the mode, and an echo of the
training configuration.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from rntc.errors import CorruptFileError, DatasetError
from rntc.neural.hypernet import HyperNet, HyperNetSpec
from rntc.neural.mainnet import MainNetSpec

MAGIC = b"RNTCCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    net: HyperNet
    main_spec: MainNetSpec
    meta: dict

    @property
    def mode(self) -> str:
        return self.main_spec.mode


def _spec_dict(obj) -> dict:
    return json.loads(json.dumps(asdict(obj)))


def save_checkpoint(path, net: HyperNet, main_spec: MainNetSpec, train_config=None,
                    history=None, extra: dict | None = None):
    desc = {
        "hyper_spec": _spec_dict(net.spec),
        "main_spec": _spec_dict(main_spec),
        "mode": main_spec.mode,
        "train_config": _spec_dict(train_config) if train_config is not None else None,
        "epochs_done": len(history) if history else 0,
    }
    if extra:
        desc.update(extra)
    blob = json.dumps(desc, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<Q", net.params.size))
            fh.write(net.params.astype("<f4").tobytes())
    except OSError as e:
        raise DatasetError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read checkpoint {path}: {e}") from e
    if data[:8] != MAGIC:
        raise DatasetError(f"{path} is not a checkpoint (bad magic)")
    if len(data) < 16:
        raise CorruptFileError("truncated checkpoint header")
    version, n = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise DatasetError(f"checkpoint version {version} unsupported")
    pos = 16 + n
    if len(data) < pos + 8:
        raise CorruptFileError("truncated checkpoint descriptor")
    desc = json.loads(data[16:pos])
    (count,) = struct.unpack_from("<Q", data, pos)
    payload = data[pos + 8:]
    if len(payload) != 4 * count:
        raise CorruptFileError(f"checkpoint payload has {len(payload)} bytes, expected {4 * count}")
    hs = desc["hyper_spec"]
    hyper = HyperNetSpec(hs["in_size"], hs["in_channels"], tuple(tuple(c) for c in hs["convs"]),
                         hs["padding"], hs["out_dim"])
    ms = desc["main_spec"]
    main = MainNetSpec(tuple(ms["widths"]), tuple(ms["hidden"]), ms["mode"])
    params = np.frombuffer(payload, "<f4").astype(float)
    return Checkpoint(HyperNet(hyper, params), main, desc)

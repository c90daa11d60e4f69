"""Model checkpoints as a zip of ``.npy`` members with fixed metadata.

Member timestamps and ordering are fixed, so equal states produce equal bytes.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .config import RunConfig
from .geo import CitySet
from .model import ModelState

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _put(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(state: ModelState, path) -> Path:
    path = Path(path)
    opt = state.optimizer
    meta = {
        "format": FORMAT_VERSION,
        # paths describe where a run happened, not the model, so they are not stored
        "config": state.config.replace(cities="", flows="", out="out").to_text(),
        "cities": list(state.cities.names),
        "optimizer": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _put(zf, "meta.json", json.dumps(meta, sort_keys=True).encode("utf-8"))
        _put(zf, "cities/lat.npy", _npy_bytes(state.cities.lat))
        _put(zf, "cities/lon.npy", _npy_bytes(state.cities.lon))
        for group, arrays in (("params", state.params), ("adam_m", opt.m), ("adam_v", opt.v)):
            for key in sorted(arrays):
                _put(zf, f"{group}/{key}.npy", _npy_bytes(arrays[key]))
    return path


def load_checkpoint(path) -> ModelState:
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, IsADirectoryError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise CheckpointError(f"{path}: missing meta.json") from None
        if meta.get("format") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')}")
        groups: dict[str, dict[str, np.ndarray]] = {"params": {}, "adam_m": {}, "adam_v": {}, "cities": {}}
        for name in zf.namelist():
            if not name.endswith(".npy"):
                continue
            group, key = name[:-4].split("/", 1)
            groups[group][key] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    cities = CitySet(tuple(meta["cities"]), groups["cities"]["lat"], groups["cities"]["lon"])
    o = meta["optimizer"]
    opt = dc.OptimizerState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"],
                            m=groups["adam_m"], v=groups["adam_v"])
    return ModelState(RunConfig.from_text(meta["config"]), cities, groups["params"], opt)

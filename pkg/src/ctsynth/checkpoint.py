"""Directory checkpoints with a bit-exact round trip.

Layout::

    manifest.json  [{name, shape, dtype: "f64", offset}]   offsets in bytes
    params.bin     little-endian f64, concatenated in manifest order
    optim.bin      Adam moments: for each optimizer, for each of its params, m then v
    rng.json       Philox states of every named stream
    state.json     counters, optimizer layout, config and data metadata
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataError

LE_F64 = np.dtype("<f8")


def _write_blob(path: str, arrays: list[np.ndarray]) -> list[int]:
    offsets, pos = [], 0
    with open(path, "wb") as fh:
        for a in arrays:
            raw = np.ascontiguousarray(a, dtype=LE_F64).tobytes()
            offsets.append(pos)
            fh.write(raw)
            pos += len(raw)
    return offsets


def _read_blob(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _take(blob: bytes, offset: int, shape) -> np.ndarray:
    n = int(np.prod(shape)) if len(shape) else 1
    end = offset + 8 * n
    if end > len(blob):
        raise DataError(f"checkpoint blob truncated (need {end} bytes, have {len(blob)})")
    return np.frombuffer(blob, dtype=LE_F64, count=n, offset=offset).astype(np.float64).reshape(shape)


def save(path: str, named_params: list, optimizers: dict, rng_state: dict, state: dict) -> None:
    """``named_params``: [(name, Parameter)]; ``optimizers``: {label: Adam}."""
    os.makedirs(path, exist_ok=True)
    offsets = _write_blob(os.path.join(path, "params.bin"), [p.data for _, p in named_params])
    manifest = [{"name": n, "shape": list(p.data.shape), "dtype": "f64", "offset": o}
                for (n, p), o in zip(named_params, offsets)]
    index = {id(p): n for n, p in named_params}
    layout, moments = [], []
    for label, opt in optimizers.items():
        names = [index[id(p)] for p in opt.params]
        layout.append({"optimizer": label, "steps": opt.steps, "params": names})
        for m, v in zip(opt.m, opt.v):
            moments.extend([m, v])
    _write_blob(os.path.join(path, "optim.bin"), moments)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    with open(os.path.join(path, "rng.json"), "w", encoding="utf-8") as fh:
        json.dump(rng_state, fh)
    with open(os.path.join(path, "state.json"), "w", encoding="utf-8") as fh:
        json.dump({**state, "optimizers": layout}, fh, indent=1, sort_keys=True)


def load(path: str) -> dict:
    """Raw checkpoint contents: params {name: array}, optim {label: {steps, m, v}}, rng, state."""
    for f in ("manifest.json", "params.bin", "optim.bin", "rng.json", "state.json"):
        if not os.path.exists(os.path.join(path, f)):
            raise DataError(f"checkpoint file missing: {os.path.join(path, f)}")
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(os.path.join(path, "rng.json"), encoding="utf-8") as fh:
        rng_state = json.load(fh)
    with open(os.path.join(path, "state.json"), encoding="utf-8") as fh:
        state = json.load(fh)
    blob = _read_blob(os.path.join(path, "params.bin"))
    params = {}
    for entry in manifest:
        if entry.get("dtype") != "f64":
            raise DataError(f"unsupported dtype {entry.get('dtype')!r} for {entry['name']}")
        params[entry["name"]] = _take(blob, entry["offset"], tuple(entry["shape"]))
    moments = _read_blob(os.path.join(path, "optim.bin"))
    optim, pos = {}, 0
    for spec in state["optimizers"]:
        ms, vs = [], []
        for name in spec["params"]:
            shape = params[name].shape
            ms.append(_take(moments, pos, shape))
            pos += 8 * params[name].size
            vs.append(_take(moments, pos, shape))
            pos += 8 * params[name].size
        optim[spec["optimizer"]] = {"steps": spec["steps"], "params": spec["params"], "m": ms, "v": vs}
    return {"params": params, "optim": optim, "rng": rng_state, "state": state}

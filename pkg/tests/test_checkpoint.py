import json

import numpy as np
import pytest

from ctsynth import checkpoint as ckpt
from ctsynth.errors import DataError
from ctsynth.nn import Parameter
from ctsynth.optim import Adam
from ctsynth.rng import Streams


def setup(seed=0):
    rng = np.random.default_rng(seed)
    params = [("a.w", Parameter(rng.standard_normal((3, 2)))), ("a.b", Parameter(rng.standard_normal(2))),
              ("c.s", Parameter(np.array(rng.standard_normal())))]
    opt = Adam([p for _, p in params[:2]])
    for _ in range(3):
        for _, p in params[:2]:
            p.grad = rng.standard_normal(p.shape)
        opt.step()
    streams = Streams(seed)
    streams["batch"].random(5)
    return params, {"main": opt}, streams


def test_bit_exact_round_trip(tmp_path):
    params, optim, streams = setup()
    ckpt.save(str(tmp_path), params, optim, streams.state(), {"iter": 7})
    raw = ckpt.load(str(tmp_path))
    for name, p in params:
        assert raw["params"][name].tobytes() == p.data.tobytes()
    o = raw["optim"]["main"]
    assert o["steps"] == 3 and o["params"] == ["a.w", "a.b"]
    for m, v, m0, v0 in zip(o["m"], o["v"], optim["main"].m, optim["main"].v):
        assert m.tobytes() == m0.tobytes() and v.tobytes() == v0.tobytes()
    back = Streams(0)
    back.load(raw["rng"])
    assert np.array_equal(back["batch"].random(4), streams["batch"].random(4))
    assert raw["state"]["iter"] == 7


def test_manifest_layout(tmp_path):
    params, optim, streams = setup()
    ckpt.save(str(tmp_path), params, optim, streams.state(), {})
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert [m["name"] for m in manifest] == ["a.w", "a.b", "c.s"]
    assert [m["offset"] for m in manifest] == [0, 48, 64]
    assert all(m["dtype"] == "f64" for m in manifest) and manifest[2]["shape"] == []
    blob = (tmp_path / "params.bin").read_bytes()
    assert len(blob) == 8 * 9
    assert np.frombuffer(blob[48:64], dtype="<f8").tolist() == params[1][1].data.tolist()


def test_missing_and_truncated_files(tmp_path):
    params, optim, streams = setup()
    ckpt.save(str(tmp_path), params, optim, streams.state(), {})
    (tmp_path / "params.bin").write_bytes((tmp_path / "params.bin").read_bytes()[:40])
    with pytest.raises(DataError, match="truncated"):
        ckpt.load(str(tmp_path))
    (tmp_path / "rng.json").unlink()
    with pytest.raises(DataError, match="rng.json"):
        ckpt.load(str(tmp_path))

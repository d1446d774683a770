import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctsynth import data as D
from ctsynth.errors import DataError


def test_sines_closed_form():
    x = D.sines_raw([0.25], [0.0], 3)[:, 0]
    assert x[0] == 0.0 and x[1] == pytest.approx(1.0, abs=1e-15) and abs(x[2]) < 1e-15
    c = D.sines_raw([0.0], [0.7], 5)[:, 0]
    assert np.all(c == np.sin(0.7))


def test_gen_sines_ranges_and_shape():
    ds = D.gen_sines(50, np.random.default_rng(0))
    t, x = ds.arrays()
    assert x.shape == (50, 24, 5) and t.shape == (50, 24)
    assert x.min() >= 0.0 and x.max() <= 1.0
    raw = ds.scale.invert(x)
    assert raw.min() >= -1.0 - 1e-9 and raw.max() <= 1.0 + 1e-9
    assert np.allclose(t[0], D.normalized_grid(24)) and t[0, 0] == D.TIME_EPS and t[0, -1] == 1.0
    with pytest.raises(DataError):
        D.gen_sines(0, np.random.default_rng(0))


def test_gen_sines_deterministic():
    a = D.gen_sines(5, np.random.default_rng(3)).arrays()[1]
    b = D.gen_sines(5, np.random.default_rng(3)).arrays()[1]
    assert np.array_equal(a, b)


def write_csv(path, rows, header=None):
    with open(path, "w") as fh:
        if header:
            fh.write(header + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    return str(path)


def test_load_csv_windows_and_header(tmp_path):
    rng = np.random.default_rng(1)
    rows = rng.standard_normal((30, 2))
    p = write_csv(tmp_path / "a.csv", rows, header="open,close")
    ds = D.load_csv(p, window=24)
    assert len(ds) == 7 and ds.lengths == {24}
    assert np.allclose(ds.samples[3].values, ds.scale.apply(rows[3:27]))
    assert len(D.load_csv(p, window=24, stride=3)) == 3


def test_load_csv_constant_column_scales_to_zero(tmp_path):
    rows = np.column_stack([np.arange(25.0), np.full(25, 4.0)])
    ds = D.load_csv(write_csv(tmp_path / "c.csv", rows), window=24)
    assert all(np.all(s.values[:, 1] == 0.0) for s in ds.samples)


def test_load_csv_errors(tmp_path):
    with pytest.raises(DataError, match="b.csv:3"):
        D.load_csv(write_csv(tmp_path / "b.csv", [[1, 2], [3, 4], ["x", 5]] + [[1, 1]] * 30), window=24)
    with pytest.raises(DataError, match="fewer than window"):
        D.load_csv(write_csv(tmp_path / "s.csv", [[1, 2]] * 10), window=24)
    with pytest.raises(DataError, match="nope.csv"):
        D.load_csv(str(tmp_path / "nope.csv"))


def test_scale_round_trip_and_identity():
    sc = D.Scale(np.zeros(2), np.ones(2))
    x = np.array([[0.2, 0.9]])
    assert np.allclose(sc.apply(x), x, atol=1e-6)
    rng = np.random.default_rng(2)
    y = rng.uniform(-5, 5, (40, 3))
    sc = D.Scale.fit(y)
    assert np.max(np.abs(sc.invert(sc.apply(y)) - y)) <= 1e-9
    s = sc.apply(y)
    assert s.min() >= 0.0 and s.max() <= 1.0
    ds = D.Dataset([D.SeriesSample([0.5, 1.0], s[:2])], scale=sc)
    assert np.allclose(D.unscale(ds, D.scale(ds, y)), y, atol=1e-9)
    with pytest.raises(DataError):
        D.scale(D.Dataset([]), y)


def test_drop_counts():
    ds = D.gen_sines(4, np.random.default_rng(0))
    out = D.drop_random(ds, 0.3, np.random.default_rng(1))
    assert out.irregular and out.lengths == {17}
    assert all(s.kept_idx[0] == 0 for s in out.samples)
    out = D.drop_random(ds, 1 / 24, np.random.default_rng(1))
    assert out.lengths == {23}
    assert D.drop_count(0.5, 24) == 12 and D.drop_count(0.7, 24) == 17
    assert D.drop_count(0.25, 2) == 1  # half rounds away from zero


def test_drop_determinism_and_errors():
    ds = D.gen_sines(3, np.random.default_rng(0))
    a = D.drop_random(ds, 0.5, np.random.default_rng(5))
    b = D.drop_random(ds, 0.5, np.random.default_rng(5))
    c = D.drop_random(ds, 0.5, np.random.default_rng(6))
    assert all(np.array_equal(u.kept_idx, v.kept_idx) for u, v in zip(a.samples, b.samples))
    assert any(not np.array_equal(u.kept_idx, v.kept_idx) for u, v in zip(a.samples, c.samples))
    with pytest.raises(DataError):
        D.drop_random(ds, 0.0, np.random.default_rng(0))
    short = D.Dataset([D.SeriesSample(D.normalized_grid(3), np.zeros((3, 1)))])
    with pytest.raises(DataError):
        D.drop_random(short, 0.3, np.random.default_rng(0))
    tiny = D.Dataset([D.SeriesSample(D.normalized_grid(4), np.zeros((4, 1)))])
    with pytest.raises(DataError):
        D.drop_random(tiny, 0.7, np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 40), st.floats(0.05, 0.6), st.integers(0, 1000))
def test_drop_preserves_order_and_values(n, rate, seed):
    s = D.SeriesSample(D.normalized_grid(n), np.arange(n, dtype=float)[:, None])
    if n - D.drop_count(rate, n) < 2:
        return
    out = D.drop_random(D.Dataset([s]), rate, np.random.default_rng(seed)).samples[0]
    assert np.all(np.diff(out.times) > 0)
    assert np.all(np.diff(out.kept_idx) > 0) and out.kept_idx[0] == 0
    assert np.array_equal(out.values[:, 0], out.kept_idx.astype(float))
    assert out.times[0] >= D.TIME_EPS and out.times[-1] <= 1.0


def test_sample_validation():
    with pytest.raises(DataError):
        D.SeriesSample([0.1, 0.1], [[1.0], [2.0]])
    with pytest.raises(DataError):
        D.SeriesSample([0.1, 0.2], [[1.0]])
    with pytest.raises(DataError):
        D.SeriesSample([0.1, 0.2], [[1.0], [np.nan]])


@pytest.mark.parametrize("irregular", [False, True])
def test_save_load_round_trip(tmp_path, irregular):
    ds = D.gen_sines(3, np.random.default_rng(4), dim=2, length=6)
    if irregular:
        ds = D.drop_random(ds, 0.3, np.random.default_rng(0))
    D.save_dataset(ds, str(tmp_path / "d"))
    assert sorted(os.listdir(tmp_path / "d"))[:3] == ["dataset.json", "sample_000000.csv", "sample_000001.csv"]
    with open(tmp_path / "d" / "sample_000000.csv") as fh:
        assert fh.readline().startswith("times" if irregular else "x0")
    back = D.load_dataset(str(tmp_path / "d"))
    assert back.irregular == irregular and back.window == 6
    for u, v in zip(ds.samples, back.samples):
        assert np.array_equal(u.times, v.times) and np.array_equal(u.values, v.values)
    assert np.array_equal(back.scale.minimum, ds.scale.minimum)
    meta = json.loads((tmp_path / "d" / "dataset.json").read_text())
    assert meta["irregular"] == irregular


def test_load_dataset_missing(tmp_path):
    with pytest.raises(DataError, match="missing_dir"):
        D.load_dataset(str(tmp_path / "missing_dir"))


def test_time_maps_invert():
    u = np.linspace(0, 1, 7)
    assert np.allclose(D.to_window_time(D.to_internal_time(u)), u, atol=1e-15)
    assert D.to_internal_time(0.0) == D.TIME_EPS

"""Datasets: synthetic sines, CSV windows, min-max scaling, random dropping.

Observation times are normalised so a window of L steps spans
``[TIME_EPS, 1]``; the first time stays strictly positive, which keeps the
first Brownian marginal of the generator non-degenerate.
"""

from __future__ import annotations

import csv
import glob
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

TIME_EPS = 0.02


def normalized_grid(length: int) -> np.ndarray:
    if length < 2:
        return np.array([1.0])
    return TIME_EPS + (1.0 - TIME_EPS) * np.arange(length) / (length - 1)


def to_internal_time(u) -> np.ndarray:
    """Map user-facing window coordinates in [0, 1] onto [TIME_EPS, 1]."""
    return TIME_EPS + (1.0 - TIME_EPS) * np.asarray(u, dtype=np.float64)


def to_window_time(t) -> np.ndarray:
    return (np.asarray(t, dtype=np.float64) - TIME_EPS) / (1.0 - TIME_EPS)


@dataclass
class SeriesSample:
    times: np.ndarray
    values: np.ndarray
    kept_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.kept_idx = np.asarray(self.kept_idx, dtype=int)
        if len(self.times) != len(self.values):
            raise DataError(f"{len(self.times)} times but {len(self.values)} value rows")
        if np.any(np.diff(self.times) <= 0):
            raise DataError("sample times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DataError("sample values must be finite")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class Scale:
    minimum: np.ndarray
    maximum: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Scale":
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, np.shape(rows)[-1])
        return cls(rows.min(axis=0), rows.max(axis=0))

    def apply(self, values):
        return (np.asarray(values) - self.minimum) / (self.maximum - self.minimum + 1e-7)

    def invert(self, values):
        return np.asarray(values) * (self.maximum - self.minimum + 1e-7) + self.minimum

    def to_json(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Scale":
        return cls(np.asarray(obj["min"], dtype=np.float64), np.asarray(obj["max"], dtype=np.float64))


def scale(ds: "Dataset", values):
    if ds.scale is None:
        raise DataError("dataset has no fitted scale")
    return ds.scale.apply(values)


def unscale(ds: "Dataset", values):
    if ds.scale is None:
        raise DataError("dataset has no fitted scale")
    return ds.scale.invert(values)


@dataclass
class Dataset:
    samples: list
    scale: Scale | None = None
    window: int | None = None
    irregular: bool = False

    def __post_init__(self):
        if self.window is None and self.samples:
            self.window = len(self.samples[0]) if not self.irregular else None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples[0].dim

    @property
    def lengths(self) -> set:
        return {len(s) for s in self.samples}

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (times (S, L), values (S, L, dim)); lengths must agree."""
        if len(self.lengths) != 1:
            raise DataError(f"samples have differing lengths {sorted(self.lengths)}")
        return np.stack([s.times for s in self.samples]), np.stack([s.values for s in self.samples])


def sines_raw(freq: np.ndarray, phase: np.ndarray, length: int) -> np.ndarray:
    """x_k(t) = sin(2 pi f_k t + theta_k) at integer t = 0..length-1 -> (length, dim)."""
    t = np.arange(length)[:, None]
    return np.sin(2.0 * np.pi * np.asarray(freq)[None, :] * t + np.asarray(phase)[None, :])


def gen_sines(n: int, rng: np.random.Generator, dim: int = 5, length: int = 24) -> Dataset:
    if n < 1:
        raise DataError("n must be >= 1")
    raw = []
    for _ in range(n):
        f = rng.uniform(0.0, 1.0, size=dim)
        theta = rng.uniform(-np.pi, np.pi, size=dim)
        raw.append(sines_raw(f, theta, length))
    raw = np.stack(raw)
    sc = Scale.fit(raw)
    grid = normalized_grid(length)
    samples = [SeriesSample(grid.copy(), sc.apply(x)) for x in raw]
    return Dataset(samples, scale=sc, window=length)


def _read_rows(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise DataError(f"{path}:{lineno}: non-numeric value in row {row!r}") from None
    if rows and len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: rows have differing column counts")
    return np.asarray(rows, dtype=np.float64)


def load_csv(path: str, window: int = 24, stride: int = 1) -> Dataset:
    data = _read_rows(path)
    if len(data) < window:
        raise DataError(f"{path}: {len(data)} rows is fewer than window={window}")
    sc = Scale.fit(data)
    scaled = sc.apply(data)
    grid = normalized_grid(window)
    samples = [SeriesSample(grid.copy(), scaled[i : i + window]) for i in range(0, len(data) - window + 1, stride)]
    return Dataset(samples, scale=sc, window=window)


def drop_count(rate: float, n: int) -> int:
    # round half away from zero
    return int(math.floor(rate * n + 0.5))


def drop_random(ds: Dataset, rate: float, rng: np.random.Generator) -> Dataset:
    if not 0.0 < rate < 1.0:
        raise DataError(f"drop rate must lie in (0, 1), got {rate}")
    out = []
    for s in ds.samples:
        n = len(s)
        if n < 4:
            raise DataError(f"sample of length {n} is too short to drop from (need >= 4)")
        k = drop_count(rate, n)
        if n - k < 2:
            raise DataError(f"dropping {k} of {n} observations leaves fewer than 2")
        dropped = rng.choice(n - 1, size=k, replace=False) + 1
        keep = np.setdiff1d(np.arange(n), dropped)
        base = s.kept_idx[keep] if s.kept_idx.size else keep
        out.append(SeriesSample(s.times[keep], s.values[keep], kept_idx=base))
    return Dataset(out, scale=ds.scale, window=ds.window, irregular=True)


# ---------------------------------------------------------------------------
# on-disk format: one CSV per sample, ``times`` column only for irregular data


def save_dataset(ds: Dataset, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for old in glob.glob(os.path.join(directory, "sample_*.csv")):
        os.remove(old)
    for i, s in enumerate(ds.samples):
        with open(os.path.join(directory, f"sample_{i:06d}.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            cols = [f"x{j}" for j in range(s.dim)]
            if ds.irregular:
                w.writerow(["times"] + cols)
                for t, row in zip(s.times, s.values):
                    w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
            else:
                w.writerow(cols)
                for row in s.values:
                    w.writerow([repr(float(v)) for v in row])
    meta = {"window": ds.window, "irregular": ds.irregular}
    if ds.scale is not None:
        meta["scale"] = ds.scale.to_json()
    with open(os.path.join(directory, "dataset.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh)


def load_dataset(directory: str) -> Dataset:
    if not os.path.isdir(directory):
        raise DataError(f"dataset directory not found: {directory}")
    files = sorted(glob.glob(os.path.join(directory, "sample_*.csv")))
    if not files:
        raise DataError(f"no sample_*.csv files in {directory}")
    meta = {}
    meta_path = os.path.join(directory, "dataset.json")
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    samples, irregular = [], False
    for path in files:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        rows = _read_rows(path)
        if header and header[0] == "times":
            irregular = True
            samples.append(SeriesSample(rows[:, 0], rows[:, 1:]))
        else:
            samples.append(SeriesSample(normalized_grid(len(rows)), rows))
    window = meta.get("window") or (None if irregular else len(samples[0]))
    sc = Scale.from_json(meta["scale"]) if "scale" in meta else None
    return Dataset(samples, scale=sc, window=window, irregular=irregular or bool(meta.get("irregular")))

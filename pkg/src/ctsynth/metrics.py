"""Post-hoc evaluation: discriminative and predictive scores, KDE and embedding dumps.

Both scores train a fresh two-layer discrete GRU (hidden 2 * dim(x), Adam
1e-3, batch 128). Irregular datasets get an extra time-gap input channel.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .data import Dataset, to_window_time
from .errors import DataError
from .nn import GRUCell, Linear, Module
from .optim import Adam
from .rng import stream

MODES = ("one_step_last_feature", "full_vector")


class PosthocGRU(Module):
    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator, layers: int = 2):
        self.cells = [GRUCell(n_in if k == 0 else hidden, hidden, rng) for k in range(layers)]
        self.head = Linear(hidden, n_out, rng)

    def states(self, x: np.ndarray) -> list:
        """Top-layer state after every step of x (B, L, n_in)."""
        B, L, _ = x.shape
        hs = [T.Tensor(np.zeros((B, c.hidden))) for c in self.cells]
        top = []
        for i in range(L):
            inp = T.Tensor(x[:, i])
            for k, cell in enumerate(self.cells):
                hs[k] = cell(inp, hs[k])
                inp = hs[k]
            top.append(inp)
        return top


def _check_pair(a: Dataset, b: Dataset) -> None:
    if len(a) == 0 or len(b) == 0:
        raise DataError("both datasets must be nonempty")
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")


def _gaps(times: np.ndarray, ahead: bool) -> np.ndarray:
    """Per-step time gaps (S, L, 1) in window units; backward (0 first) or forward (0 last)."""
    d = np.diff(to_window_time(times), axis=1)
    pad = np.zeros((times.shape[0], 1))
    g = np.concatenate([d, pad], axis=1) if ahead else np.concatenate([pad, d], axis=1)
    return g[..., None]


def disc_from_accuracy(acc: float) -> float:
    return abs(float(acc) - 0.5)


def _split(n: int, rng: np.random.Generator, frac: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    k = int(round(frac * n))
    return perm[:k], perm[k:]


def discriminative_score(real: Dataset, fake: Dataset, rng: np.random.Generator | int = 0,
                         steps: int = 2000, batch: int = 128, lr: float = 1e-3) -> float:
    """|test accuracy - 0.5| of a post-hoc GRU telling real from fake."""
    _check_pair(real, fake)
    rng = rng if isinstance(rng, np.random.Generator) else stream(int(rng), "disc-score")
    irregular = real.irregular or fake.irregular
    feats = []
    for ds in (real, fake):
        t, v = ds.arrays()
        feats.append(np.concatenate([v, _gaps(t, ahead=False)], axis=2) if irregular else v)
    if feats[0].shape[1] != feats[1].shape[1]:
        raise DataError(f"sequence length mismatch: {feats[0].shape[1]} vs {feats[1].shape[1]}")
    tr_r, te_r = _split(len(feats[0]), rng)
    tr_f, te_f = _split(len(feats[1]), rng)
    x_tr = np.concatenate([feats[0][tr_r], feats[1][tr_f]])
    y_tr = np.concatenate([np.zeros(len(tr_r), int), np.ones(len(tr_f), int)])
    x_te = np.concatenate([feats[0][te_r], feats[1][te_f]])
    y_te = np.concatenate([np.zeros(len(te_r), int), np.ones(len(te_f), int)])

    dim = real.dim
    net = PosthocGRU(x_tr.shape[2], 2 * dim, 2, rng)
    opt = Adam(net.parameters(), lr=lr)
    for _ in range(steps):
        idx = rng.choice(len(x_tr), size=min(batch, len(x_tr)), replace=False)
        logits = net.head(net.states(x_tr[idx])[-1])
        lp = T.log_softmax(logits)
        loss = -lp[np.arange(len(idx)), y_tr[idx]].mean()
        opt.zero_grad()
        T.backward(loss)
        opt.step()
    if len(x_te) == 0:
        raise DataError("test split is empty; need more samples")
    with T.no_grad():
        logits = net.head(net.states(x_te)[-1]).data
    acc = float(np.mean(np.argmax(logits, axis=1) == y_te))
    return disc_from_accuracy(acc)


def _pred_xy(ds: Dataset, mode: str, irregular: bool) -> tuple[np.ndarray, np.ndarray]:
    t, v = ds.arrays()
    if mode == "one_step_last_feature":
        x = v[:, :-1, :-1] if v.shape[2] > 1 else v[:, :-1]
        y = v[:, 1:, -1:]
    elif mode == "full_vector":
        x, y = v[:, :-1], v[:, 1:]
    else:
        raise ValueError(f"unknown predictive mode {mode!r}; choose from {MODES}")
    if irregular:
        # gap to the step being predicted
        x = np.concatenate([x, _gaps(t, ahead=True)[:, :-1]], axis=2)
    return x, y


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


def predictive_score(fake_train: Dataset, real_test: Dataset, mode: str = "one_step_last_feature",
                     rng: np.random.Generator | int = 0, steps: int = 2000, batch: int = 128,
                     lr: float = 1e-3, predictor=None) -> float:
    """Train-on-synthetic, test-on-real MAE of a next-step GRU predictor.

    ``predictor`` (x -> y) replaces the trained network when given.
    """
    _check_pair(fake_train, real_test)
    rng = rng if isinstance(rng, np.random.Generator) else stream(int(rng), "pred-score")
    irregular = fake_train.irregular or real_test.irregular
    x_te, y_te = _pred_xy(real_test, mode, irregular)
    if predictor is None:
        x_tr, y_tr = _pred_xy(fake_train, mode, irregular)
        net = PosthocGRU(x_tr.shape[2], 2 * fake_train.dim, y_tr.shape[2], rng)
        opt = Adam(net.parameters(), lr=lr)

        def run(x):
            return T.stack([T.sigmoid(net.head(h)) for h in net.states(x)], axis=1)

        for _ in range(steps):
            idx = rng.choice(len(x_tr), size=min(batch, len(x_tr)), replace=False)
            loss = T.absolute(run(x_tr[idx]) - y_tr[idx]).mean()
            opt.zero_grad()
            T.backward(loss)
            opt.step()

        def predictor(x):
            with T.no_grad():
                return run(x).data

    return mae(predictor(x_te), y_te)


def default_mode(ds: Dataset) -> str:
    return "full_vector" if ds.irregular else "one_step_last_feature"


@dataclass
class EvalReport:
    disc_score: float
    pred_score: float
    pred_score_original: float
    n_real: int
    n_fake: int
    seed: int
    mode: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def evaluate(real: Dataset, fake: Dataset, seed: int = 0, mode: str | None = None,
             steps: int = 2000) -> EvalReport:
    mode = mode or default_mode(real)
    disc = discriminative_score(real, fake, stream(seed, "disc-score"), steps=steps)
    pred = predictive_score(fake, real, mode, stream(seed, "pred-score"), steps=steps)
    orig = predictive_score(real, real, mode, stream(seed, "pred-score"), steps=steps)
    return EvalReport(disc, pred, orig, len(real), len(fake), seed, mode)


def kde_export(values, grid: int | np.ndarray = 512) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE with Silverman's bandwidth evaluated on a grid.

    An int ``grid`` spans [min - 4 bw, max + 4 bw]. The bandwidth has a small
    floor so degenerate samples still give a finite curve, and the curve is
    normalised to unit trapezoid mass on the grid (a no-op up to discretisation
    error when the grid resolves the bandwidth).
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise DataError("kde needs at least 2 values")
    if not np.all(np.isfinite(x)):
        raise DataError("kde values must be finite")
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25])) / 1.349
    spread = min(sd, iqr) if iqr > 0 else sd
    floor = 1e-3 * max(1.0, float(np.max(np.abs(x))))
    bw = max(0.9 * spread * x.size ** -0.2, floor)
    if np.ndim(grid) == 0:
        g = np.linspace(x.min() - 4 * bw, x.max() + 4 * bw, int(grid))
    else:
        g = np.asarray(grid, dtype=np.float64)
    dens = np.zeros_like(g)
    for chunk in np.array_split(x, max(1, x.size // 2048)):
        u = (g[:, None] - chunk[None, :]) / bw
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    dens /= x.size * bw * np.sqrt(2 * np.pi)
    mass = np.trapezoid(dens, g) if hasattr(np, "trapezoid") else np.trapz(dens, g)
    if mass > 0:
        dens = dens / mass
    return g, dens


def write_kde(path: str, grid: np.ndarray, real: np.ndarray, fake: np.ndarray | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "real"] + (["fake"] if fake is not None else []))
        for i, gx in enumerate(grid):
            w.writerow([repr(float(gx)), repr(float(real[i]))] + ([repr(float(fake[i]))] if fake is not None else []))


def embedding_export(real: Dataset, fake: Dataset, path: str) -> None:
    """Flattened per-sample vectors with a ``label`` column, for an external t-SNE."""
    _check_pair(real, fake)
    _, vr = real.arrays()
    _, vf = fake.arrays()
    if vr.shape[1:] != vf.shape[1:]:
        raise DataError(f"shape mismatch: {vr.shape[1:]} vs {vf.shape[1:]}")
    L, D = vr.shape[1:]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"t{i}_x{j}" for i in range(L) for j in range(D)] + ["label"])
            for label, arr in (("real", vr), ("fake", vf)):
                for row in arr.reshape(len(arr), -1):
                    w.writerow([repr(float(v)) for v in row] + [label])
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def read_embedding(path: str) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[:-1]] for r in rows]), [r[-1] for r in rows]

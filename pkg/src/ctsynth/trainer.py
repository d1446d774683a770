"""Training loop: autoencoder pre-training, then the interleaved joint loop.

Every joint iteration k runs, in this order:

  ae      reconstruction step on encoder + decoder
  mle     (k % P_MLE == 0) exact-likelihood step on the generator, fed the
          detached real hidden sequence, plus the flow regularisers
  disc    discriminator BCE on real vs detached fake
  gen     non-saturating generator loss; only the flow parameters move
  assist  decoder step lowering the discriminator loss on fake samples

Each executed sub-step is appended to ``trace`` (``"<k>:<name>"``; pre-training
steps appear as ``"pre:<k>:ae"``).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os

import numpy as np

from . import checkpoint as ckpt
from . import spline
from . import tensor as T
from .config import TrainConfig
from .data import TIME_EPS, Dataset, Scale, SeriesSample, normalized_grid, to_internal_time
from .decoder import Decoder
from .discriminator import Discriminator, bce_fake, bce_real
from .encoder import Encoder
from .errors import DataError, NumericError, TrainingAbort
from .generator import Generator, generate, log_density, regularizers, sample_wiener
from .nn import Module, frozen
from .ode import SolverConfig
from .optim import Adam
from .rng import Streams, stream

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("iter", "recon", "disc", "gen", "mle", "kinetic", "jac", "dir")


class Networks(Module):
    """The four networks; parameter names are prefixed by network."""

    def __init__(self, dim_x: int, cfg: TrainConfig, rng: np.random.Generator):
        dim_h = cfg.dim_h or 4 * dim_x
        self.encoder = Encoder(dim_x, dim_h, rng)
        self.decoder = Decoder(dim_h, dim_x, rng, out_activation=cfg.r_acti)
        self.generator = Generator(dim_h, rng)
        self.discriminator = Discriminator(dim_x, rng, layers=cfg.d_layer)

    @property
    def dim_h(self) -> int:
        return self.encoder.dim_h


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


class Trainer:
    def __init__(self, cfg: TrainConfig, data: Dataset | None = None, out_dir: str | None = None,
                 meta: dict | None = None):
        self.cfg = cfg
        self.out_dir = out_dir
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        if data is not None:
            if len(data) == 0:
                raise DataError("dataset is empty")
            window = data.window or max(len(s) for s in data.samples)
            meta = {"dim_x": data.dim, "window": int(window), "irregular": bool(data.irregular),
                    "scale": data.scale.to_json() if data.scale is not None else None}
        if meta is None:
            raise ValueError("need either a dataset or checkpoint metadata")
        self.meta = meta
        self.dim_x, self.window = meta["dim_x"], meta["window"]
        self.irregular = meta["irregular"]
        self.streams = Streams(cfg.seed)
        self.model = Networks(self.dim_x, cfg, self.streams["init"])
        self.grid = normalized_grid(self.window)
        spacing = (1.0 - TIME_EPS) / (self.window - 1)
        self.net_cfg = SolverConfig("rk4", step_size=spacing / cfg.ode_substeps)
        self.flow_cfg = SolverConfig("dopri5", atol=cfg.atol, rtol=cfg.rtol, max_steps=cfg.max_flow_steps)
        betas = (cfg.beta1, cfg.beta2)
        m = self.model
        self.optim = {
            "ae": Adam(m.encoder.parameters() + m.decoder.parameters(), lr=cfg.lr_ae, betas=betas),
            "gen": Adam(m.generator.parameters(), lr=cfg.lr_gen, betas=betas),
            "disc": Adam(m.discriminator.parameters(), lr=cfg.lr_disc, betas=betas),
        }
        self.pretrain_iter = 0
        self.joint_iter = 0
        self.trace: list[str] = []
        self.rows: list[dict] = []
        self.times = self.values = self.splines = None
        if data is not None:
            self.times, self.values = data.arrays()
            self.splines = spline.SplineBatch([spline.fit(t, v) for t, v in zip(self.times, self.values)])

    # ------------------------------------------------------------------ utils

    @property
    def iteration(self) -> int:
        return self.pretrain_iter + self.joint_iter

    def _require_data(self):
        if self.values is None:
            raise DataError("this trainer was restored without data; pass a dataset to train")

    def _batch(self) -> np.ndarray:
        n = len(self.values)
        return self.streams["batch"].choice(n, size=min(self.cfg.batch_size, n), replace=False)

    def _checked(self, loss: T.Tensor, substep: str) -> float:
        v = float(loss.data)
        if not math.isfinite(v):
            raise TrainingAbort(f"non-finite {substep} loss at iteration {self.iteration}",
                                iteration=self.iteration, substep=substep)
        return v

    def _update(self, loss: T.Tensor, opt_name: str) -> None:
        opt = self.optim[opt_name]
        for o in self.optim.values():
            o.zero_grad()
        T.backward(loss)
        opt.step()

    def _guard(self, substep: str, fn):
        try:
            return fn()
        except TrainingAbort:
            raise
        except NumericError as exc:
            raise TrainingAbort(f"{substep} failed at iteration {self.iteration}: {exc}",
                                iteration=self.iteration, substep=substep) from exc

    def _record(self, tag: str) -> None:
        self.trace.append(tag)
        if self.out_dir:
            with open(os.path.join(self.out_dir, "trace.log"), "a", encoding="utf-8") as fh:
                fh.write(tag + "\n")

    def _log_row(self, row: dict) -> None:
        self.rows.append(row)
        if self.out_dir:
            path = os.path.join(self.out_dir, "metrics.csv")
            new = not os.path.exists(path)
            with open(path, "a", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                if new:
                    w.writerow(METRIC_COLUMNS)
                w.writerow([row["iter"]] + [_fmt(row.get(c)) for c in METRIC_COLUMNS[1:]])

    # ------------------------------------------------------------- sub-steps

    def _ae_step(self, idx: np.ndarray) -> tuple[float, np.ndarray]:
        m = self.model
        x = self.values[idx]
        h = m.encoder.encode_batch(self.splines.take(idx), x[:, 0], self.net_cfg)
        x_hat = m.decoder.decode_batch(h, self.times[idx], None, self.net_cfg)
        diff = x_hat - x
        loss = (diff * diff).mean()
        v = self._checked(loss, "ae")
        self._update(loss, "ae")
        return v, h.data

    def _mle_step(self, h_real: np.ndarray, times: np.ndarray) -> dict:
        cfg = self.cfg
        ld = log_density(self.model.generator, h_real, times, self.flow_cfg, n_probes=cfg.n_probes,
                         rng=self.streams["probe"], regularize=True)
        kin, jac, direc, recon = regularizers(ld.state, ld.recon)
        nll = -ld.per_element.mean()
        loss = (nll + kin * cfg.reg_kinetic + jac * cfg.reg_jacobian + direc * cfg.reg_directional
                + recon * cfg.reg_recon)
        self._checked(loss, "mle")
        self._update(loss, "gen")
        return {"mle": float(nll.data), "kinetic": float(kin.data), "jac": float(jac.data),
                "dir": float(direc.data)}

    def query_times(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Adversarial sampling times (n, M): the grid if regular, sorted uniforms otherwise."""
        if not self.irregular:
            M = self.cfg.M or self.window
            if M == self.window:
                return np.tile(self.grid, (n, 1))
            return np.tile(to_internal_time(np.linspace(0.0, 1.0, M)), (n, 1))
        M = self.cfg.M or (self.values.shape[1] if self.values is not None else self.window)
        return to_internal_time(np.sort(rng.uniform(0.0, 1.0, size=(n, M)), axis=1))

    def _fake_hidden(self, n: int) -> T.Tensor:
        z = sample_wiener(self.grid, self.model.dim_h, self.streams["wiener"], n=n).z
        return generate(self.model.generator, z, self.grid, self.flow_cfg)

    def _gan_steps(self, idx: np.ndarray) -> tuple[float, float, np.ndarray, np.ndarray]:
        m, B = self.model, len(idx)
        grid = np.tile(self.grid, (B, 1))
        q = self.query_times(B, self.streams["query"])
        with frozen(m.decoder, m.encoder):
            h_fake = self._fake_hidden(B)
            x_fake = m.decoder.decode_batch(h_fake, grid, q, self.net_cfg)

        x_fixed = x_fake.detach()
        loss_d = (bce_real(m.discriminator.logits(self.times[idx], self.values[idx], self.net_cfg))
                  + bce_fake(m.discriminator.logits(q, x_fixed, self.net_cfg)))
        v_d = self._checked(loss_d, "disc")
        self._update(loss_d, "disc")
        self._record(f"{self.joint_iter}:disc")

        with frozen(m.discriminator, m.decoder, m.encoder):
            loss_g = bce_real(m.discriminator.logits(q, x_fake, self.net_cfg))
            v_g = self._checked(loss_g, "gen")
            self._update(loss_g, "gen")
        self._record(f"{self.joint_iter}:gen")
        return v_d, v_g, h_fake.data, q

    def _assist_step(self, h_fake: np.ndarray, q: np.ndarray) -> float:
        m = self.model
        grid = np.tile(self.grid, (len(h_fake), 1))
        with frozen(m.discriminator, m.generator, m.encoder):
            x_fake = m.decoder.decode_batch(T.Tensor(h_fake), grid, q, self.net_cfg)
            loss = bce_fake(m.discriminator.logits(q, x_fake, self.net_cfg))
            v = self._checked(loss, "assist")
            self._update(loss, "ae")
        return v

    # ------------------------------------------------------------ public API

    def pretrain_step(self) -> float:
        self._require_data()
        idx = self._batch()
        loss, _ = self._guard("ae", lambda: self._ae_step(idx))
        self._record(f"pre:{self.pretrain_iter}:ae")
        self._log_row({"iter": self.iteration, "recon": loss})
        self.pretrain_iter += 1
        return loss

    def pretrain(self, steps: int | None = None) -> list[float]:
        steps = self.cfg.K_AE - self.pretrain_iter if steps is None else steps
        return [self.pretrain_step() for _ in range(max(0, steps))]

    def joint_step(self) -> dict:
        self._require_data()
        k = self.joint_iter
        idx = self._batch()
        report = {"iter": self.iteration}
        report["recon"], h_real = self._guard("ae", lambda: self._ae_step(idx))
        self._record(f"{k}:ae")
        if self.cfg.mle_active and k % self.cfg.P_MLE == 0:
            report.update(self._guard("mle", lambda: self._mle_step(h_real, self.times[idx])))
            self._record(f"{k}:mle")
        report["disc"], report["gen"], h_fake, q = self._guard("gan", lambda: self._gan_steps(idx))
        self._guard("assist", lambda: self._assist_step(h_fake, q))
        self._record(f"{k}:assist")
        self._log_row(report)
        self.joint_iter += 1
        return report

    def train(self) -> list[dict]:
        self._require_data()
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
        every = self.cfg.checkpoint_every
        while self.pretrain_iter < self.cfg.K_AE:
            self.pretrain_step()
            if every and self.out_dir and self.iteration % every == 0:
                self.save(os.path.join(self.out_dir, "checkpoint"))
        while self.joint_iter < self.cfg.K_JOINT:
            self.joint_step()
            if every and self.out_dir and self.iteration % every == 0:
                self.save(os.path.join(self.out_dir, "checkpoint"))
        if self.out_dir:
            self.save(os.path.join(self.out_dir, "checkpoint"))
        return self.rows

    def sample(self, n: int, times=None, seed: int | None = None, chunk: int = 256) -> Dataset:
        """``n`` synthetic series at ``times`` in window coordinates [0, 1].

        ``times`` is one shared grid (M,), a per-series grid (n, M), or None
        for the training grid. The draw depends only on ``seed``.
        """
        if times is None:
            q = np.tile(self.grid, (n, 1))
        else:
            u = np.asarray(times, dtype=np.float64)
            if u.ndim == 1:
                u = np.tile(u, (n, 1))
            if u.ndim != 2 or u.shape[0] != n or u.shape[1] == 0:
                raise DataError("sample times must be a nonempty (M,) or (n, M) array")
            if np.any(u < 0.0) or np.any(u > 1.0):
                raise DataError("sample times must lie in [0, 1]")
            if np.any(np.diff(u, axis=1) <= 0):
                raise DataError("sample times must be strictly increasing")
            q = to_internal_time(u)
        rng = stream(self.cfg.seed if seed is None else seed, "sample")
        out = []
        with T.no_grad():
            for start in range(0, n, chunk):
                qb = q[start : start + chunk]
                b = len(qb)
                z = sample_wiener(self.grid, self.model.dim_h, rng, n=b).z
                h = generate(self.model.generator, z, self.grid, self.flow_cfg)
                x = self.model.decoder.decode_batch(h, np.tile(self.grid, (b, 1)), qb, self.net_cfg)
                out.extend(SeriesSample(t.copy(), xi) for t, xi in zip(qb, x.data))
        scale = Scale.from_json(self.meta["scale"]) if self.meta.get("scale") else None
        regular = times is None or (q.shape[1] == self.window and np.allclose(q, self.grid))
        return Dataset(out, scale=scale, window=self.window if regular else None, irregular=not regular)

    # ----------------------------------------------------------- checkpoints

    def save(self, path: str) -> None:
        state = {"pretrain_iter": self.pretrain_iter, "joint_iter": self.joint_iter,
                 "config": self.cfg.to_dict(), "meta": self.meta}
        ckpt.save(path, self.model.named_parameters(), self.optim, self.streams.state(), state)

    @classmethod
    def load(cls, path: str, data: Dataset | None = None, out_dir: str | None = None) -> "Trainer":
        raw = ckpt.load(path)
        st = raw["state"]
        cfg = TrainConfig.from_dict(st["config"])
        tr = cls(cfg, data=data, out_dir=out_dir, meta=st["meta"] if data is None else None)
        params = dict(tr.model.named_parameters())
        for name, arr in raw["params"].items():
            if name not in params or params[name].data.shape != arr.shape:
                raise DataError(f"checkpoint parameter {name} does not match the model")
            params[name].data = arr.copy()
        index = {id(p): n for n, p in params.items()}
        for label, opt in tr.optim.items():
            saved = raw["optim"][label]
            if saved["params"] != [index[id(p)] for p in opt.params]:
                raise DataError(f"optimizer {label} layout does not match the model")
            opt.steps = saved["steps"]
            opt.m = [a.copy() for a in saved["m"]]
            opt.v = [a.copy() for a in saved["v"]]
        tr.streams.load(raw["rng"])
        tr.pretrain_iter, tr.joint_iter = st["pretrain_iter"], st["joint_iter"]
        return tr


def pretrain_autoencoder(cfg: TrainConfig, data: Dataset) -> tuple[Trainer, list[float]]:
    tr = Trainer(cfg, data)
    return tr, tr.pretrain()


def train(cfg: TrainConfig, data: Dataset, out_dir: str | None = None) -> Trainer:
    tr = Trainer(cfg, data, out_dir=out_dir)
    log.info("resolved config %s", json.dumps(cfg.to_dict(), sort_keys=True))
    tr.train()
    return tr


def sample(checkpoint: str | Trainer, n: int, times=None, seed: int | None = None) -> Dataset:
    tr = checkpoint if isinstance(checkpoint, Trainer) else Trainer.load(checkpoint)
    return tr.sample(n, times=times, seed=seed)

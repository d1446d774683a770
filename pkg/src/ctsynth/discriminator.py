"""GRU-ODE discriminator: reads a series on its own time grid, returns P(real)."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import tensor as T
from .nn import GRUCell, GRUODECell, Linear, Module
from .ode import SolverConfig, integrate, n_substeps


class Discriminator(Module):
    def __init__(self, dim_x: int, rng: np.random.Generator, dim_c: int | None = None, layers: int = 1):
        dim_c = dim_c or 4 * dim_x
        self.dim_x, self.dim_c = dim_x, dim_c
        self.fc_init = Linear(dim_x, dim_c, rng)
        self.q = GRUODECell(dim_c, rng)
        # stacked jump: each layer refines the state with the same observation
        self.jumps = [GRUCell(dim_x, dim_c, rng) for _ in range(layers)]
        self.fc_cls = Linear(dim_c, 2, rng)

    def logits(self, times: np.ndarray, values, cfg: SolverConfig) -> T.Tensor:
        """Class logits (B, 2) for values (B, L, dim_x) observed at times (B, L)."""
        times = np.asarray(times, dtype=np.float64)
        values = values if isinstance(values, T.Tensor) else T.Tensor(values)
        c = self.fc_init(values[:, 0])
        for i in range(1, times.shape[1]):
            gap = times[:, i] - times[:, i - 1]
            c = self._evolve(c, times[:, i - 1], gap, cfg)
            x = values[:, i]
            for cell in self.jumps:
                c = cell(x, c)
        return self.fc_cls(c)

    def prob_real(self, times, values, cfg: SolverConfig) -> np.ndarray:
        with T.no_grad():
            lp = T.log_softmax(self.logits(times, values, cfg))
        return np.exp(lp.data[:, 0])

    def _evolve(self, c, t_start, gap, cfg):
        if gap.max() <= 0:
            return c
        scale = gap[:, None]

        def field(s, state):
            return self.q(state, t_start + s * gap) * scale

        sub = cfg
        if cfg.method == "rk4":
            sub = replace(cfg, step_size=1.0 / n_substeps(gap.max(), cfg.step_size))
        return integrate(field, c, 0.0, 1.0, sub).y1


def classify(disc: Discriminator, sample, cfg: SolverConfig) -> float:
    """Probability that a single series is real (softmax component 0)."""
    times = np.asarray(sample.times, dtype=np.float64)[None]
    values = np.asarray(sample.values, dtype=np.float64)[None]
    return float(disc.prob_real(times, values, cfg)[0])


def bce_real(logits) -> T.Tensor:
    """Mean -log P(real)."""
    return -T.log_softmax(logits)[:, 0].mean()


def bce_fake(logits) -> T.Tensor:
    """Mean -log P(fake)."""
    return -T.log_softmax(logits)[:, 1].mean()

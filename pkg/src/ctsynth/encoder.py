"""Neural CDE encoder: a series becomes a hidden sequence of equal length.

h_0 = FC(x_0) and h_{i+1} = h_i + int_{t_i}^{t_{i+1}} f(h) dX/dt dt, where X is
the natural cubic control path. Each interval is solved in its own unit
clock s in [0, 1] (t = t_i + s * gap), which lets every row of a batch use
its own time grid while sharing one solver loop; the CDE is invariant under
that reparametrisation.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import tensor as T
from .errors import DivergenceError
from .nn import Linear, Module
from .ode import SolverConfig, integrate, n_substeps
from .spline import SplineBatch, fit


class Encoder(Module):
    def __init__(self, dim_x: int, dim_h: int, rng: np.random.Generator, width: int | None = None):
        width = width or 4 * dim_x
        self.dim_x, self.dim_h = dim_x, dim_h
        self.fc_init = Linear(dim_x, dim_h, rng)
        self.f_net = [
            Linear(dim_h, width, rng, init="kaiming"),
            Linear(width, width, rng, init="kaiming"),
            Linear(width, width, rng, init="kaiming"),
            Linear(width, dim_h * (1 + dim_x), rng, init="xavier"),
        ]

    def field_matrix(self, h) -> T.Tensor:
        """f(h) reshaped to (B, dim_h, 1 + dim_x)."""
        z = h
        for layer in self.f_net[:-1]:
            z = T.relu(layer(z))
        z = T.tanh(self.f_net[-1](z))
        return z.reshape(z.shape[0], self.dim_h, 1 + self.dim_x)

    def encode_batch(self, splines: SplineBatch, x0, cfg: SolverConfig) -> T.Tensor:
        """Hidden sequence (B, N, dim_h) for a batch of equal-length paths."""
        times = splines.knot_times
        h = self.fc_init(x0)
        hs = [h]
        for i in range(times.shape[1] - 1):
            gap = times[:, i + 1] - times[:, i]
            field = _cde_field(self, splines, i, gap)
            sub = cfg
            if cfg.method == "rk4":
                sub = replace(cfg, step_size=1.0 / n_substeps(gap.max(), cfg.step_size))
            try:
                h = integrate(field, h, 0.0, 1.0, sub).y1
            except DivergenceError as exc:
                raise DivergenceError(f"encoder interval {i}: {exc}", t_reached=exc.t_reached) from exc
            hs.append(h)
        return T.stack(hs, axis=1)


def _cde_field(enc: Encoder, splines: SplineBatch, i: int, gap: np.ndarray):
    def field(s, h):
        dxds = splines.deriv_in_interval(i, s * gap) * gap[:, None]
        return T.bmv(enc.field_matrix(h), dxds)

    return field


def encode(enc: Encoder, sample, cfg: SolverConfig) -> list[tuple[float, np.ndarray]]:
    """Encode one series; returns [(t_i, h_i)] with one entry per observation."""
    path = fit(sample.times, sample.values)
    batch = SplineBatch([path])
    with T.no_grad():
        h = enc.encode_batch(batch, np.asarray(sample.values)[:1], cfg)
    return [(float(t), h.data[0, k]) for k, t in enumerate(sample.times)]

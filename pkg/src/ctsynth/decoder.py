"""GRU-ODE decoder: hidden sequence -> continuous path sampled at any times.

Between events the state d follows the GRU-ODE field; at every hidden time a
GRU jump reads h_i; at every query time the output head emits x_hat. Hidden
and query times are merged into one schedule per row (hidden first on ties),
so sampling never re-integrates from t_0. Query-only events apply no jump.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import tensor as T
from .errors import DivergenceError
from .nn import GRUCell, GRUODECell, Linear, Module
from .ode import SolverConfig, integrate, n_substeps


class Decoder(Module):
    def __init__(self, dim_h: int, dim_x: int, rng: np.random.Generator, dim_d: int | None = None,
                 out_activation: str = "softplus"):
        dim_d = dim_d or dim_h
        self.dim_h, self.dim_x, self.dim_d = dim_h, dim_x, dim_d
        self.out_activation = out_activation
        self.fc_init = Linear(dim_h, dim_d, rng)
        self.g = GRUODECell(dim_d, rng)
        self.jump = GRUCell(dim_h, dim_d, rng)
        self.fc_out = Linear(dim_d, dim_x, rng)

    def emit(self, d) -> T.Tensor:
        return T.activation(self.fc_out(d), self.out_activation)

    def decode_batch(self, hidden, hidden_times: np.ndarray, query_times: np.ndarray | None,
                     cfg: SolverConfig) -> T.Tensor:
        """Decode (B, N, dim_h) hidden vectors at (B, M) query times -> (B, M, dim_x).

        ``query_times=None`` reconstructs at the hidden times.
        """
        hidden_times = np.asarray(hidden_times, dtype=np.float64)
        B, N = hidden_times.shape
        if query_times is None:
            query_times = hidden_times
        query_times = np.asarray(query_times, dtype=np.float64).reshape(B, -1)
        M = query_times.shape[1]
        if M == 0:
            return T.Tensor(np.zeros((B, 0, self.dim_x)))
        lo, hi = hidden_times[:, :1], hidden_times[:, -1:]
        tol = 1e-12
        if np.any(query_times < lo - tol) or np.any(query_times > hi + tol):
            raise ValueError("query time out of range of the hidden sequence")
        if np.any(np.diff(query_times, axis=1) < 0):
            raise ValueError("query times must be sorted")

        times = np.concatenate([hidden_times, query_times], axis=1)
        kinds = np.concatenate([np.zeros((B, N), int), np.ones((B, M), int)], axis=1)
        slots = np.concatenate([np.tile(np.arange(N), (B, 1)), np.tile(np.arange(M), (B, 1))], axis=1)
        order = np.lexsort((kinds, times), axis=1)
        times = np.take_along_axis(times, order, 1)
        kinds = np.take_along_axis(kinds, order, 1)
        slots = np.take_along_axis(slots, order, 1)

        d = self.fc_init(hidden[:, 0])
        outputs, out_events = [], []
        for k in range(times.shape[1]):
            if k > 0:
                gap = times[:, k] - times[:, k - 1]
                if gap.max() > 0:
                    d = self._evolve(d, times[:, k - 1], gap, cfg)
                jump_rows = kinds[:, k] == 0
                if jump_rows.any():
                    idx = np.where(jump_rows, slots[:, k], 0)
                    same = bool(np.all(idx == idx[0]))
                    h_k = hidden[:, int(idx[0])] if same else T.gather_rows(hidden, idx)
                    d_new = self.jump(h_k, d)
                    if jump_rows.all():
                        d = d_new
                    else:
                        m = jump_rows[:, None].astype(np.float64)
                        d = d_new * m + d * (1.0 - m)
            if (kinds[:, k] == 1).any():
                outputs.append(self.emit(d))
                out_events.append(k)

        stacked = T.stack(outputs, axis=1)  # (B, E, dim_x)
        pos = {k: e for e, k in enumerate(out_events)}
        sel = np.zeros((B, M), dtype=np.intp)
        for b in range(B):
            ks = np.flatnonzero(kinds[b] == 1)
            sel[b] = [pos[k] for k in ks]
        if len(out_events) == M and np.all(sel == np.arange(M)):
            return stacked
        return stacked[np.arange(B)[:, None], sel]

    def _evolve(self, d, t_start: np.ndarray, gap: np.ndarray, cfg: SolverConfig):
        scale = gap[:, None]

        def field(s, state):
            return self.g(state, t_start + s * gap) * scale

        sub = cfg
        if cfg.method == "rk4":
            sub = replace(cfg, step_size=1.0 / n_substeps(gap.max(), cfg.step_size))
        try:
            return integrate(field, d, 0.0, 1.0, sub).y1
        except DivergenceError as exc:
            raise DivergenceError(f"decoder: {exc}", t_reached=exc.t_reached) from exc


def decode_at(dec: Decoder, hidden: list, query_times, cfg: SolverConfig) -> list[tuple[float, np.ndarray]]:
    """Decode one hidden sequence [(t_i, h_i)] at ``query_times``."""
    q = np.asarray(query_times, dtype=np.float64)
    if q.size == 0:
        return []
    times = np.array([[t for t, _ in hidden]])
    h = T.Tensor(np.stack([np.asarray(v) for _, v in hidden])[None])
    with T.no_grad():
        out = dec.decode_batch(h, times, q[None], cfg)
    return [(float(s), out.data[0, j]) for j, s in enumerate(q)]


def reconstruct(dec: Decoder, hidden: list, cfg: SolverConfig) -> list[tuple[float, np.ndarray]]:
    return decode_at(dec, hidden, [t for t, _ in hidden], cfg)

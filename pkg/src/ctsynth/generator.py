"""Continuous-time flow generator over the hidden space.

A Wiener path z sampled on the series' time grid is pushed through an
invertible neural ODE, one flow per time point:

    dw/dtau = r(w, a_i, tau),  w(0) = z_i,  a_i = t_i,  h_i = w(1).

Running the flow backwards gives z_hat = w(0) from a hidden vector, and the
instantaneous change of variables gives the exact density of a hidden
sequence under the model:

    log p(h_i) = log p_W(z_hat_i | z_hat_{i-1}) - int_0^1 tr(dr/dw) dtau,

where p_W is the Brownian transition density over the grid. The trace comes
from forward-mode tangents through r: Rademacher probes (Hutchinson) during
training, or every basis vector for the exact trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, Parameter, default_uniform
from .ode import SolverConfig, integrate

LOG_2PI = float(np.log(2.0 * np.pi))
DIRECTIONAL_STEP = 1e-4


class Generator(Module):
    """Three Softplus(Linear) layers; each reads the previous output plus (a, tau)."""

    def __init__(self, dim_h: int, rng: np.random.Generator, use_tau: bool = True, layers: int = 3):
        self.dim_h = dim_h
        self.use_tau = use_tau
        n_ctx = 2 if use_tau else 1
        self.weights = []
        for k in range(layers):
            setattr(self, f"w{k}", Parameter(default_uniform(rng, dim_h + n_ctx, (dim_h, dim_h))))
            setattr(self, f"c{k}", Parameter(default_uniform(rng, dim_h + n_ctx, (n_ctx, dim_h))))
            setattr(self, f"b{k}", Parameter(default_uniform(rng, dim_h + n_ctx, (dim_h,))))
        self.n_layers = layers

    def _context(self, a: np.ndarray, tau: float) -> np.ndarray:
        if not self.use_tau:
            return a
        return np.concatenate([a, np.full_like(a, tau)], axis=1)

    def field(self, w, a: np.ndarray, tau: float, tangents=()):
        """r(w, a, tau) and the Jacobian-vector products J v for each tangent v."""
        ctx = self._context(a, tau)
        x, tans = w, list(tangents)
        for k in range(self.n_layers):
            W, C, b = getattr(self, f"w{k}"), getattr(self, f"c{k}"), getattr(self, f"b{k}")
            pre = T.linear(x, W, b) + T.matmul(ctx, C)
            x = T.softplus(pre)
            if tans:
                slope = T.sigmoid(pre)
                tans = [T.linear(v, W) * slope for v in tans]
        return x, tans


class LinearField:
    """dw/dtau = lam * w; a closed-form stand-in for the network in tests."""

    def __init__(self, lam: float):
        self.lam = float(lam)

    def field(self, w, a, tau, tangents=()):
        return w * self.lam, [v * self.lam for v in tangents]


@dataclass
class WienerPath:
    times: np.ndarray  # (N,) or (B, N)
    z: np.ndarray  # (B, N, dim)


@dataclass
class FlowState:
    """Endpoint of an augmented forward solve; accumulators are per row."""

    w: T.Tensor
    a: np.ndarray
    logdet: T.Tensor
    kinetic: T.Tensor | None = None
    jac_frob: T.Tensor | None = None
    directional: T.Tensor | None = None


@dataclass
class LogDensity:
    per_element: T.Tensor  # (B, N)
    total: T.Tensor  # (B,)
    z_hat: T.Tensor  # (B, N, dim)
    h_hat: T.Tensor  # (B, N, dim)
    state: FlowState
    recon: T.Tensor  # mean squared round-trip error


def sample_wiener(times, dim: int, rng: np.random.Generator, n: int = 1) -> WienerPath:
    """Draw ``n`` Brownian paths at ``times`` (shared (N,) or per-path (n, N))."""
    times = np.asarray(times, dtype=np.float64)
    grid = np.broadcast_to(times, (n, times.shape[-1]))
    if np.any(grid[:, 0] <= 0):
        raise ValueError("Wiener path times must start strictly after 0")
    if np.any(np.diff(grid, axis=1) <= 0):
        raise ValueError("Wiener path times must be strictly increasing")
    dt = np.diff(np.concatenate([np.zeros((n, 1)), grid], axis=1), axis=1)
    steps = rng.standard_normal((n, grid.shape[1], dim)) * np.sqrt(dt)[..., None]
    return WienerPath(times=times, z=np.cumsum(steps, axis=1))


def _rows(x: T.Tensor) -> T.Tensor:
    B, N, D = x.shape
    return x.reshape(B * N, D)


def _flow(net, w, a: np.ndarray, t0: float, t1: float, cfg: SolverConfig):
    def field(tau, state):
        return net.field(state, a, tau)[0]

    return integrate(field, w, t0, t1, cfg).y1


def generate(net, z, times: np.ndarray, cfg: SolverConfig) -> T.Tensor:
    """Hidden sequence (B, N, dim) from latent Wiener samples (B, N, dim)."""
    z = z if isinstance(z, T.Tensor) else T.Tensor(z)
    B, N, D = z.shape
    a = np.broadcast_to(np.asarray(times, dtype=np.float64), (B, N)).reshape(-1, 1)
    return _flow(net, _rows(z), a, 0.0, 1.0, cfg).reshape(B, N, D)


def inverse(net, h, times: np.ndarray, cfg: SolverConfig) -> T.Tensor:
    """Latent z_hat (B, N, dim) that ``generate`` maps onto ``h``."""
    h = h if isinstance(h, T.Tensor) else T.Tensor(h)
    B, N, D = h.shape
    a = np.broadcast_to(np.asarray(times, dtype=np.float64), (B, N)).reshape(-1, 1)
    return _flow(net, _rows(h), a, 1.0, 0.0, cfg).reshape(B, N, D)


def _probes(n_rows: int, dim: int, n_probes: int, rng: np.random.Generator | None) -> tuple[list, bool]:
    if n_probes == 0:
        if dim > 16:
            raise ValueError("exact trace mode is limited to dim <= 16")
        eye = np.eye(dim)
        return [np.broadcast_to(eye[k], (n_rows, dim)).copy() for k in range(dim)], True
    if rng is None:
        raise ValueError("Hutchinson probes need an rng")
    return [rng.choice([-1.0, 1.0], size=(n_rows, dim)) for _ in range(n_probes)], False


def forward_augmented(net, w0, a: np.ndarray, cfg: SolverConfig, n_probes: int = 1,
                      rng: np.random.Generator | None = None, regularize: bool = True) -> FlowState:
    """Solve the flow 0 -> 1 from ``w0`` (R, dim) while integrating tr(dr/dw)
    and, with ``regularize``, the kinetic, Jacobian-norm and directional terms."""
    w0 = w0 if isinstance(w0, T.Tensor) else T.Tensor(w0)
    R, D = w0.shape
    probes, exact = _probes(R, D, n_probes, rng)
    zero = T.Tensor(np.zeros((R, 1)))

    def field(tau, state):
        w = state[0]
        r, jv = net.field(w, a, tau, probes)
        if exact:
            tr = T.stack([jv[k][:, k] for k in range(D)], axis=1).sum(axis=1, keepdims=True)
        else:
            tr = T.lincomb([(v * p).sum(axis=1, keepdims=True) for v, p in zip(jv, probes)],
                           [1.0 / len(probes)] * len(probes))
        if not regularize:
            return r, tr
        kin = (r * r).sum(axis=1, keepdims=True)
        if exact:
            jac = T.lincomb([(v * v).sum(axis=1, keepdims=True) for v in jv], [1.0] * len(jv))
        else:
            jac = T.lincomb([(v * v).sum(axis=1, keepdims=True) for v in jv], [1.0 / len(jv)] * len(jv))
        r_next, _ = net.field(w, a, tau + DIRECTIONAL_STEP)
        dr = (r_next - r) * (1.0 / DIRECTIONAL_STEP)
        direc = (dr * dr).sum(axis=1, keepdims=True)
        return r, tr, kin, jac, direc

    y0 = (w0, zero) if not regularize else (w0, zero, zero, zero, zero)
    y1 = integrate(field, y0, 0.0, 1.0, cfg).y1
    if not regularize:
        return FlowState(w=y1[0], a=a, logdet=y1[1])
    return FlowState(w=y1[0], a=a, logdet=y1[1], kinetic=y1[2], jac_frob=y1[3], directional=y1[4])


def brownian_log_prob(z, times: np.ndarray) -> T.Tensor:
    """Per-element Brownian transition log-density (B, N) of a latent path."""
    z = z if isinstance(z, T.Tensor) else T.Tensor(z)
    B, N, D = z.shape
    times = np.broadcast_to(np.asarray(times, dtype=np.float64), (B, N))
    dt = np.diff(np.concatenate([np.zeros((B, 1)), times], axis=1), axis=1)
    if np.any(dt <= 0):
        raise ValueError("nonpositive time gap in hidden sequence")
    inc = z if N == 1 else T.concat([z[:, :1], z[:, 1:] - z[:, :-1]], axis=1)
    sq = (inc * inc).sum(axis=2)
    return sq * (-0.5 / dt) + (-0.5 * D * (LOG_2PI + np.log(dt)))


def log_density(net, hidden, times: np.ndarray, cfg: SolverConfig, n_probes: int = 1,
                rng: np.random.Generator | None = None, regularize: bool = False) -> LogDensity:
    """Exact log-density of hidden sequences (B, N, dim) under the flow.

    The inverse solve recovers z_hat; a forward augmented solve from z_hat
    reproduces h_hat and integrates the trace. ``n_probes=0`` selects the
    exact trace (dim <= 16).
    """
    hidden = hidden if isinstance(hidden, T.Tensor) else T.Tensor(hidden)
    B, N, D = hidden.shape
    a = np.broadcast_to(np.asarray(times, dtype=np.float64), (B, N)).reshape(-1, 1)
    z_hat = inverse(net, hidden, times, cfg)
    state = forward_augmented(net, _rows(z_hat), a, cfg, n_probes=n_probes, rng=rng, regularize=regularize)
    base = brownian_log_prob(z_hat, times)
    per_element = base - state.logdet.reshape(B, N)
    h_hat = state.w.reshape(B, N, D)
    diff = h_hat - hidden
    recon = (diff * diff).sum(axis=2).mean()
    return LogDensity(per_element=per_element, total=per_element.sum(axis=1), z_hat=z_hat,
                      h_hat=h_hat, state=state, recon=recon)


def regularizers(state: FlowState, recon=None) -> tuple:
    """(kinetic, jac_frob, directional, recon_reg), each averaged over rows."""
    def avg(x):
        return x.mean() if x is not None else T.Tensor(0.0)

    return avg(state.kinetic), avg(state.jac_frob), avg(state.directional), (recon if recon is not None else T.Tensor(0.0))

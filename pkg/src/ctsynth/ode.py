"""Fixed-step RK4 and adaptive Dormand-Prince 5(4), unrolled on the tape.

States are a ``Tensor`` or a tuple of tensors; the vector field returns the
same structure. Every stage is an ordinary tensor op, so ``backward`` through
a solve gives exact gradients of the discretised map. Step-size control reads
raw arrays only and never enters the tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import DivergenceError, NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4"
    step_size: float = 0.01
    atol: float = 1e-2
    rtol: float = 1e-3
    max_steps: int = 10_000

    def __post_init__(self):
        if self.method not in ("rk4", "dopri5"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not (self.step_size > 0 and self.atol > 0 and self.rtol > 0):
            raise ValueError("step_size, atol and rtol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class OdeSolution:
    y1: object
    steps_taken: int
    rejected_steps: int = 0
    max_error_ratio: float = 0.0
    t_reached: float = 0.0


Field = Callable[[float, object], object]


def _tuple(y) -> tuple:
    return y if isinstance(y, tuple) else (y,)


def _axpy(y: tuple, ks: list, coeffs: list, h: float) -> tuple:
    """y + h * sum(c_j k_j), componentwise over the state tuple."""
    out = []
    for i, yi in enumerate(y):
        terms = [yi] + [k[i] for c, k in zip(coeffs, ks) if c != 0.0]
        cs = [1.0] + [h * c for c in coeffs if c != 0.0]
        out.append(T.lincomb(terms, cs))
    return tuple(out)


def _eval(field: Field, t: float, y: tuple, structured: bool) -> tuple:
    dy = _tuple(field(t, y if structured else y[0]))
    for d in dy:
        if not np.all(np.isfinite(d.data)):
            raise NumericError(f"non-finite vector field output at t={t:.6g}")
    return dy


def integrate(field: Field, y0, t0: float, t1: float, cfg: SolverConfig) -> OdeSolution:
    """Solve dy/dt = field(t, y) from t0 to t1 (either direction)."""
    structured = isinstance(y0, tuple)
    y = tuple(T.Tensor(v) if not isinstance(v, Tensor) else v for v in _tuple(y0))
    if t0 == t1:
        return OdeSolution(y1=y if structured else y[0], steps_taken=0, t_reached=t1)
    if cfg.method == "rk4":
        sol = _rk4(field, y, float(t0), float(t1), cfg, structured)
    else:
        sol = _dopri5(field, y, float(t0), float(t1), cfg, structured)
    if not structured:
        sol.y1 = sol.y1[0]
    return sol


def integrate_reverse_time(field: Field, y0, cfg: SolverConfig, t_from: float = 1.0, t_to: float = 0.0) -> OdeSolution:
    return integrate(field, y0, t_from, t_to, cfg)


def n_substeps(span: float, step_size: float) -> int:
    return max(1, math.ceil(abs(span) / step_size - 1e-9))


def rk4_step(field: Field, t: float, y: tuple, h: float, structured: bool = True) -> tuple:
    k1 = _eval(field, t, y, structured)
    k2 = _eval(field, t + 0.5 * h, _axpy(y, [k1], [0.5], h), structured)
    k3 = _eval(field, t + 0.5 * h, _axpy(y, [k2], [0.5], h), structured)
    k4 = _eval(field, t + h, _axpy(y, [k3], [1.0], h), structured)
    return _axpy(y, [k1, k2, k3, k4], [1 / 6, 1 / 3, 1 / 3, 1 / 6], h)


def _rk4(field, y, t0, t1, cfg, structured) -> OdeSolution:
    n = n_substeps(t1 - t0, cfg.step_size)
    if n > cfg.max_steps:
        raise DivergenceError(f"rk4 needs {n} steps, max_steps={cfg.max_steps}", t_reached=t0)
    h = (t1 - t0) / n
    for i in range(n):
        y = rk4_step(field, t0 + i * h, y, h, structured)
    return OdeSolution(y1=y, steps_taken=n, t_reached=t1)


# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6]
# fifth-order minus embedded fourth-order weights
_E = (
    35 / 384 - 5179 / 57600,
    0.0,
    500 / 1113 - 7571 / 16695,
    125 / 192 - 393 / 640,
    -2187 / 6784 + 92097 / 339200,
    11 / 84 - 187 / 2100,
    -1 / 40,
)

SAFETY, MIN_FACTOR, MAX_FACTOR = 0.9, 0.2, 5.0


def _rms(parts: list) -> float:
    total = sum(float(np.sum(p * p)) for p in parts)
    count = sum(p.size for p in parts)
    return math.sqrt(total / max(count, 1))


def _initial_step(field, t0, y, f0, direction, cfg, structured) -> float:
    scale = [cfg.atol + cfg.rtol * np.abs(v.data) for v in y]
    d0 = _rms([v.data / s for v, s in zip(y, scale)])
    d1 = _rms([f.data / s for f, s in zip(f0, scale)])
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    with T.no_grad():
        y1 = tuple(T.Tensor(v.data + direction * h0 * f.data) for v, f in zip(y, f0))
        f1 = _eval(field, t0 + direction * h0, y1, structured)
    d2 = _rms([(a.data - b.data) / s for a, b, s in zip(f1, f0, scale)]) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h0, h1)


def _dopri5(field, y, t0, t1, cfg, structured) -> OdeSolution:
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    f0 = _eval(field, t0, y, structured)
    h = min(_initial_step(field, t0, y, f0, direction, cfg, structured), span)
    t = t0
    accepted = rejected = 0
    worst = 0.0
    while direction * (t1 - t) > 1e-12 * max(1.0, abs(t1)):
        if accepted + rejected >= cfg.max_steps:
            raise DivergenceError(f"dopri5 exceeded max_steps={cfg.max_steps}; reached t={t:.6g}", t_reached=t)
        remaining = abs(t1 - t)
        h = min(h, remaining)
        if h < 1e-12 * max(1.0, abs(t)):
            raise DivergenceError(f"dopri5 step size underflow at t={t:.6g}", t_reached=t)
        hs = direction * h
        ks = [f0]
        for i in range(1, 7):
            yi = _axpy(y, ks, list(_A[i]), hs)
            if i == 6:
                y_new = yi
            ks.append(_eval(field, t + _C[i] * hs, yi, structured))
        err = []
        scale = []
        for j in range(len(y)):
            e = hs * sum(c * k[j].data for c, k in zip(_E, ks) if c != 0.0)
            err.append(e)
            scale.append(cfg.atol + cfg.rtol * np.maximum(np.abs(y[j].data), np.abs(y_new[j].data)))
        ratio = _rms([e / s for e, s in zip(err, scale)])
        if not math.isfinite(ratio):
            raise NumericError(f"non-finite error estimate at t={t:.6g}")
        if ratio <= 1.0:
            t = t1 if h == remaining else t + hs
            y = y_new
            f0 = ks[6]  # first-same-as-last
            accepted += 1
            worst = max(worst, ratio)
            factor = MAX_FACTOR if ratio == 0.0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * ratio ** -0.2))
        else:
            rejected += 1
            factor = max(MIN_FACTOR, SAFETY * ratio ** -0.2)
        h = h * factor
    return OdeSolution(y1=y, steps_taken=accepted, rejected_steps=rejected, max_error_ratio=worst, t_reached=t)

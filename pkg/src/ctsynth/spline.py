"""Continuous control path X(t) = (t, x(t)) through observed samples.

Value channels are natural cubic splines (coefficients from
``scipy.interpolate.CubicSpline``); the time channel is stored as the exact
line ``X_0(t) = t`` so its derivative is identically one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import SplineError


@dataclass(frozen=True)
class CubicSplinePath:
    """Piecewise cubic ``a + b u + c u^2 + d u^3`` with ``u = t - knot_times[i]``.

    ``coeffs`` has shape (intervals, channels, 4), channel 0 being time.
    """

    knot_times: np.ndarray
    coeffs: np.ndarray

    @property
    def channels(self) -> int:
        return self.coeffs.shape[1]

    def _locate(self, t: float) -> tuple[int, float]:
        t0, t1 = self.knot_times[0], self.knot_times[-1]
        if not (t0 <= t <= t1):
            raise SplineError(f"t={t} outside path range [{t0}, {t1}]")
        i = int(np.searchsorted(self.knot_times, t, side="right")) - 1
        i = min(max(i, 0), len(self.knot_times) - 2)
        return i, t - self.knot_times[i]

    def eval(self, t: float) -> np.ndarray:
        i, u = self._locate(t)
        a, b, c, d = np.moveaxis(self.coeffs[i], -1, 0)
        return a + u * (b + u * (c + u * d))

    def deriv(self, t: float) -> np.ndarray:
        i, u = self._locate(t)
        _, b, c, d = np.moveaxis(self.coeffs[i], -1, 0)
        return b + u * (2.0 * c + 3.0 * u * d)


def fit(times, values) -> CubicSplinePath:
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if len(times) < 2:
        raise SplineError(f"need at least 2 observations, got {len(times)}")
    if len(values) != len(times):
        raise SplineError(f"{len(times)} times but {len(values)} value rows")
    if np.any(np.diff(times) <= 0):
        raise SplineError("times must be strictly increasing (duplicate or unsorted knot)")
    cs = CubicSpline(times, values, bc_type="natural", axis=0)
    # scipy stores highest power first: c[0] u^3 + c[1] u^2 + c[2] u + c[3]
    vc = np.stack([cs.c[3], cs.c[2], cs.c[1], cs.c[0]], axis=-1)  # (intervals, dim, 4)
    tc = np.zeros((len(times) - 1, 1, 4))
    tc[:, 0, 0] = times[:-1]
    tc[:, 0, 1] = 1.0
    return CubicSplinePath(knot_times=times, coeffs=np.concatenate([tc, vc], axis=1))


class SplineBatch:
    """Equal-length paths stacked for vectorised derivative lookups."""

    def __init__(self, paths: list[CubicSplinePath]):
        self.knot_times = np.stack([p.knot_times for p in paths])  # (B, N)
        self.coeffs = np.stack([p.coeffs for p in paths])  # (B, N-1, ch, 4)

    @classmethod
    def from_arrays(cls, knot_times: np.ndarray, coeffs: np.ndarray) -> "SplineBatch":
        obj = cls.__new__(cls)
        obj.knot_times, obj.coeffs = knot_times, coeffs
        return obj

    def take(self, idx) -> "SplineBatch":
        return SplineBatch.from_arrays(self.knot_times[idx], self.coeffs[idx])

    def deriv_in_interval(self, i: int, u: np.ndarray) -> np.ndarray:
        """dX/dt for every row at offset ``u`` (B,) past knot ``i``; returns (B, ch)."""
        c = self.coeffs[:, i]
        u = u[:, None]
        return c[..., 1] + u * (2.0 * c[..., 2] + 3.0 * u * c[..., 3])

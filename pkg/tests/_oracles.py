"""Plain numpy reference implementations used as test oracles."""

import numpy as np


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru(x, h, cell):
    """Textbook GRU step (gates r, z, n) written out from scratch."""
    H = h.shape[-1]
    wx, wh, bx, bh = (p.data for p in (cell.wx, cell.wh, cell.bx, cell.bh))
    r = sig(x @ wx[:, :H] + bx[:H] + h @ wh[:, :H] + bh[:H])
    z = sig(x @ wx[:, H:2 * H] + bx[H:2 * H] + h @ wh[:, H:2 * H] + bh[H:2 * H])
    n = np.tanh(x @ wx[:, 2 * H:] + bx[2 * H:] + r * (h @ wh[:, 2 * H:] + bh[2 * H:]))
    return (1 - z) * n + z * h


def freeze_ode_cell(cell):
    """Force the update gate to exactly 1 so the GRU-ODE field vanishes."""
    H = cell.weight.shape[0]
    cell.weight.data[:, H:2 * H] = 0.0
    cell.time_weight.data[H:2 * H] = 0.0
    cell.bias.data[H:2 * H] = 1e3

"""Parameter containers and the layers shared by the four networks."""

from __future__ import annotations

import contextlib
import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Collects ``Parameter`` attributes and child modules in definition order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, sub in enumerate(value):
                    out.extend(sub.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


@contextlib.contextmanager
def frozen(*modules: Module):
    """Temporarily stop recording gradients for the given modules' parameters."""
    params = [p for m in modules for p in m.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def kaiming_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def default_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init: str = "default"):
        if init == "kaiming":
            w = kaiming_uniform(rng, n_in, n_out)
        elif init == "xavier":
            w = xavier_uniform(rng, n_in, n_out)
        else:
            w = default_uniform(rng, n_in, (n_in, n_out))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(n_out) if init in ("kaiming", "xavier") else default_uniform(rng, n_in, (n_out,)))

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class GRUCell(Module):
    """Discrete GRU update; weights in the fused ``gru_cell`` layout."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.wx = Parameter(default_uniform(rng, hidden, (n_in, 3 * hidden)))
        self.wh = Parameter(default_uniform(rng, hidden, (hidden, 3 * hidden)))
        self.bx = Parameter(default_uniform(rng, hidden, (3 * hidden,)))
        self.bh = Parameter(default_uniform(rng, hidden, (3 * hidden,)))

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]

    def __call__(self, x, h) -> Tensor:
        return T.gru_cell(x, h, self.wx, self.wh, self.bx, self.bh)


class GRUODECell(Module):
    """Continuous GRU vector field dh/dt = (1 - z) * (u - h), time-aware."""

    def __init__(self, hidden: int, rng: np.random.Generator):
        self.weight = Parameter(default_uniform(rng, hidden, (hidden, 3 * hidden)))
        self.time_weight = Parameter(default_uniform(rng, hidden, (3 * hidden,)))
        self.bias = Parameter(default_uniform(rng, hidden, (3 * hidden,)))

    def __call__(self, h, t) -> Tensor:
        return T.gru_ode_field(h, t, self.weight, self.time_weight, self.bias)
